"""Deterministic discrete-event network over a tree topology.

Every link is full duplex; each direction is a FIFO channel that serializes
messages at the link bandwidth. Messages move store-and-forward: a hop can
start only after the whole message has arrived at the hop's input, so one
hop costs latency + 8 * bytes / bandwidth once the channel is free.
"""

from __future__ import annotations

import heapq
import itertools
from collections import deque
from dataclasses import dataclass
from typing import Any, Callable, NamedTuple

from ..errors import TransportError, TransportTimeout
from ..topology import Link, Node, Topology
from .base import Endpoint


@dataclass(frozen=True)
class SimLinkConfig:
    bandwidth_bits_per_s: float
    latency_s: float

    def __post_init__(self):
        if self.bandwidth_bits_per_s <= 0 or self.latency_s < 0:
            raise ValueError("link bandwidth must be positive and latency non-negative")

    def delivery_time(self, nbytes: int, hops: int = 1) -> float:
        return hops * (self.latency_s + 8 * nbytes / self.bandwidth_bits_per_s)


class Delivery(NamedTuple):
    msg_id: int
    src: str
    dst: str
    msg_type: int
    payload_bytes: int
    wire_bytes: int
    sent_at: float
    delivered_at: float
    crosses_rack: bool


class ChannelUse(NamedTuple):
    src: str
    dst: str
    msg_id: int
    start: float
    end: float
    wire_bytes: int


class _Channel:
    __slots__ = ("free_at", "sec_per_byte", "latency", "src", "dst")

    def __init__(self, src: str, dst: str, link: Link):
        self.src = src
        self.dst = dst
        self.free_at = 0.0
        self.sec_per_byte = 8.0 / link.bandwidth_bits_per_s
        self.latency = link.latency_s


class _Msg:
    __slots__ = ("msg_id", "src", "dst", "frame", "size", "route", "sent_at")

    def __init__(self, msg_id, src, dst, frame, size, route, sent_at):
        self.msg_id = msg_id
        self.src = src
        self.dst = dst
        self.frame = frame
        self.size = size
        self.route = route
        self.sent_at = sent_at


class SimNodeContext:
    """What a participant running inside the simulator sees of the world."""

    __slots__ = ("net", "node", "cpu_free", "reduce_rate")

    def __init__(self, net: SimNetwork, node: str, reduce_rate: float | None):
        self.net = net
        self.node = node
        self.cpu_free = 0.0
        self.reduce_rate = reduce_rate

    def now(self) -> float:
        return self.net.now

    def send(self, dst: str, frame, delay: float = 0.0) -> None:
        self.net.send(self.node, dst, frame, delay)

    def reduce_delay(self, nbytes: int) -> float:
        """Occupy this node's CPU for a reduction over ``nbytes`` of operand
        data and return how long until it finishes."""
        if not self.reduce_rate or nbytes <= 0:
            return max(0.0, self.cpu_free - self.net.now)
        start = self.cpu_free if self.cpu_free > self.net.now else self.net.now
        self.cpu_free = start + nbytes / self.reduce_rate
        return self.cpu_free - self.net.now

    def call_later(self, delay: float, fn: Callable[[], Any]) -> None:
        self.net.call_later(delay, fn)


class SimNetwork:
    def __init__(self, topology: Topology, record: bool = True, record_channels: bool = False):
        self.topology = topology
        self.now = 0.0
        self.record = record
        self.record_channels = record_channels
        self.transcript: list[Delivery] = []
        self.channel_log: list[ChannelUse] = []
        self.delivered = 0
        self._heap: list = []
        self._seq = itertools.count()
        self._msg_ids = itertools.count()
        self._channels: dict[tuple[str, str], _Channel] = {}
        for link in topology.links:
            self._channels[(link.endpoint_a, link.endpoint_b)] = _Channel(link.endpoint_a, link.endpoint_b, link)
            self._channels[(link.endpoint_b, link.endpoint_a)] = _Channel(link.endpoint_b, link.endpoint_a, link)
        self._routes: dict[tuple[str, str], tuple[_Channel, ...]] = {}
        self._handlers: dict[str, Any] = {}
        self._contexts: dict[str, SimNodeContext] = {}
        self._registered: set[str] = set()
        self._dead: set[str] = set()
        self._inbox: dict[tuple[str, str], deque] = {}

    # -- registration ----------------------------------------------------
    def register(self, node_id: str, handler: Any = None, reduce_rate: float | None = None) -> Endpoint:
        if node_id not in self.topology.endpoints:
            raise TransportError(f"{node_id} is not part of the topology")
        self._registered.add(node_id)
        self._contexts[node_id] = SimNodeContext(self, node_id, reduce_rate)
        if handler is not None:
            self._handlers[node_id] = handler
        return Endpoint(node_id, f"sim://{node_id}", "SIMULATED")

    def context(self, node_id: str) -> SimNodeContext:
        return self._contexts[node_id]

    def kill(self, node_id: str) -> None:
        """Take a node offline: it stops receiving and sends to it fail."""
        self._dead.add(node_id)
        self._handlers.pop(node_id, None)

    def connect(self, src: str, dst: str) -> SimConnection:
        for n in (src, dst):
            if n not in self._registered:
                raise TransportError(f"endpoint {n} is not registered")
        self._inbox.setdefault((src, dst), deque())
        return SimConnection(self, src, dst)

    # -- event machinery -------------------------------------------------
    def call_later(self, delay: float, fn: Callable, *args) -> None:
        heapq.heappush(self._heap, (self.now + delay, next(self._seq), fn, args))

    def _route(self, src: str, dst: str) -> tuple[_Channel, ...]:
        key = (src, dst)
        route = self._routes.get(key)
        if route is None:
            route = tuple(self._channels[(u, v)] for u, v, _ in self.topology.path(src, dst))
            self._routes[key] = route
        return route

    def send(self, src: str, dst: str, frame, delay: float = 0.0) -> None:
        dead = self._dead
        if dead and (dst in dead or src in dead):
            raise TransportError(f"connection {src} -> {dst} is down")
        if dst not in self._registered:
            raise TransportError(f"endpoint {dst} is not registered")
        route = self._routes.get((src, dst))
        if route is None:
            route = self._route(src, dst)
        msg = _Msg(next(self._msg_ids), src, dst, frame, frame.wire_size, route, self.now + delay)
        step = self._hop if route else self._deliver
        heapq.heappush(self._heap, (msg.sent_at, next(self._seq), step, (msg, 0)))

    def _hop(self, msg: _Msg, i: int) -> None:
        ch = msg.route[i]
        now = self.now
        free = ch.free_at
        start = free if free > now else now
        end = start + msg.size * ch.sec_per_byte
        ch.free_at = end
        if self.record_channels:
            self.channel_log.append(ChannelUse(ch.src, ch.dst, msg.msg_id, start, end, msg.size))
        i += 1
        step = self._hop if i < len(msg.route) else self._deliver
        heapq.heappush(self._heap, (end + ch.latency, next(self._seq), step, (msg, i)))

    def _deliver(self, msg: _Msg, _hops: int = 0) -> None:
        if msg.dst in self._dead:
            return
        self.delivered += 1
        frame = msg.frame
        if self.record:
            self.transcript.append(
                Delivery(
                    msg.msg_id,
                    msg.src,
                    msg.dst,
                    int(frame.msg_type),
                    frame.payload_len,
                    msg.size,
                    msg.sent_at,
                    self.now,
                    self.topology.crosses_rack(msg.src, msg.dst),
                )
            )
        handler = self._handlers.get(msg.dst)
        if handler is not None:
            handler.on_frame(self._contexts[msg.dst], frame, msg.src)
        else:
            self._inbox.setdefault((msg.dst, msg.src), deque()).append(frame)

    def step(self) -> bool:
        if not self._heap:
            return False
        t, _, fn, args = heapq.heappop(self._heap)
        self.now = t
        fn(*args)
        return True

    def run(self, until: float | None = None) -> float:
        heap = self._heap
        pop = heapq.heappop
        while heap:
            if until is not None and heap[0][0] > until:
                self.now = until
                break
            t, _, fn, args = pop(heap)
            self.now = t
            fn(*args)
        return self.now

    @property
    def idle(self) -> bool:
        return not self._heap

    def detach(self) -> None:
        """Drop handlers, contexts and queued work once a run is over.

        Handlers and contexts point back at the network, so without this a
        finished run's buffers wait for the cyclic garbage collector."""
        self._handlers.clear()
        self._contexts.clear()
        self._inbox.clear()
        self._heap.clear()


class SimConnection:
    """Bidirectional in-order frame stream between two registered endpoints."""

    def __init__(self, net: SimNetwork, local: str, peer: str):
        self.net = net
        self.local = local
        self.peer = peer
        self.closed = False

    def send_frame(self, frame) -> None:
        if self.closed:
            raise TransportError("connection closed")
        self.net.send(self.local, self.peer, frame)

    def recv_frame(self, timeout: float | None = None):
        """Advance the virtual clock until a frame from the peer is available."""
        inbox = self.net._inbox.setdefault((self.local, self.peer), deque())
        deadline = None if timeout is None else self.net.now + timeout
        while not inbox:
            if self.net.idle:
                raise TransportTimeout(f"{self.local}: nothing more will arrive from {self.peer}")
            if deadline is not None and self.net._heap[0][0] > deadline:
                self.net.now = deadline
                raise TransportTimeout(f"{self.local}: timed out waiting for {self.peer}")
            self.net.step()
        return inbox.popleft()

    def close(self) -> None:
        self.closed = True


def point_to_point(a: str, b: str, link: SimLinkConfig) -> Topology:
    """Two hosts joined by one direct link."""
    return Topology(
        nodes=(Node(a, "r0"), Node(b, "r0")),
        links=(Link(a, b, link.bandwidth_bits_per_s, link.latency_s),),
    )
