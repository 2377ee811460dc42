"""Blocking per-process AllReduce calls and the aggregation-server loop for
real transports (one OS process or thread per node)."""

from __future__ import annotations

import logging
import threading
import time
import weakref
from collections import deque
from typing import Sequence

import numpy as np

from ..errors import CollectiveError, StragglerTimeoutError, TransportError, TransportTimeout
from ..tensor import Tensor
from ..topology import GroupAssignment
from ..transport.base import Transport
from .aggregator import AggregationJobState, AggregationServer, Phase, straggler_check
from .algorithms import (
    AlgorithmKind,
    HfbaWorker,
    HierarchicalWorker,
    NaiveGatherWorker,
    Participant,
    RingWorker,
)
from .frame import AllReduceFrame, MsgType

log = logging.getLogger(__name__)


class Communicator:
    """Wraps a transport for one node; frames for jobs other than the one in
    progress are held back until that job runs."""

    def __init__(self, transport: Transport, hosts: Sequence[str]):
        self.transport = transport
        self.hosts = list(hosts)
        self.node = transport.node
        self._stash: deque[AllReduceFrame] = deque()

    # ctx interface used by participants
    def now(self) -> float:
        return time.monotonic()

    def send(self, dst: str, frame: AllReduceFrame, delay: float = 0.0) -> None:
        self.transport.send(dst, frame)

    def reduce_delay(self, nbytes: int) -> float:
        return 0.0

    def call_later(self, delay, fn) -> None:
        raise NotImplementedError("timers are driven by the serve loop on real transports")

    def _next_frame(self, job_id: int, timeout: float | None) -> AllReduceFrame:
        for i, f in enumerate(self._stash):
            if f.job_id == job_id:
                del self._stash[i]
                return f
        deadline = None if timeout is None else time.monotonic() + timeout
        while True:
            remaining = None if deadline is None else max(0.0, deadline - time.monotonic())
            frame = self.transport.recv(remaining)
            if frame.job_id == job_id:
                return frame
            self._stash.append(frame)

    def drive(self, p: Participant, timeout: float | None = 30.0) -> np.ndarray:
        p.start(self)
        while not p.done:
            try:
                frame = self._next_frame(p.job_id, timeout)
            except TransportTimeout as exc:
                raise CollectiveError(f"{self.node}: job {p.job_id} timed out waiting for peers") from exc
            p.on_frame(self, frame, self.hosts[frame.sender_id])
        if p.error is not None:
            raise p.error
        return p.result


# one communicator per transport so frames stashed for a later job survive
# between calls
_COMMS: weakref.WeakKeyDictionary = weakref.WeakKeyDictionary()


def _comm(transport, assignment: GroupAssignment) -> Communicator:
    if isinstance(transport, Communicator):
        return transport
    comm = _COMMS.get(transport)
    if comm is None or comm.hosts != list(assignment.topology.hosts):
        comm = _COMMS[transport] = Communicator(transport, assignment.topology.hosts)
    return comm


def allreduce_hierarchical(
    local: Tensor, assignment: GroupAssignment, transport, job_id: int = 0, round: int = 0, timeout: float | None = 30.0
) -> Tensor:
    comm = _comm(transport, assignment)
    ids = assignment.topology.host_index
    leader = assignment.leaders[assignment.group_of(comm.node)]
    p = HierarchicalWorker(comm.node, ids, job_id, round, local.data, leader)
    return Tensor(np.array(comm.drive(p, timeout)), local.logical_len)


def allreduce_ring(
    local: Tensor,
    ring_order: Sequence[str],
    transport,
    assignment: GroupAssignment,
    job_id: int = 0,
    round: int = 0,
    timeout: float | None = 30.0,
) -> Tensor:
    comm = _comm(transport, assignment)
    p = RingWorker(comm.node, assignment.topology.host_index, job_id, round, local.data, ring_order)
    return Tensor(np.array(comm.drive(p, timeout)), local.logical_len)


def allreduce_hfba(
    local: Tensor,
    assignment: GroupAssignment,
    chunk_bytes: int,
    transport,
    job_id: int = 0,
    round: int = 0,
    window: int = 1,
    timeout: float | None = 30.0,
) -> Tensor:
    comm = _comm(transport, assignment)
    ids = assignment.topology.host_index
    group = sorted(assignment.groups[assignment.group_of(comm.node)], key=ids.__getitem__)
    leaders = [sorted(g, key=ids.__getitem__)[0] for g in assignment.groups.values()]
    p = HfbaWorker(comm.node, ids, job_id, round, local.data, group, leaders, chunk_bytes, window)
    return Tensor(np.array(comm.drive(p, timeout)), local.logical_len)


def allreduce_naive(
    local: Tensor, assignment: GroupAssignment, transport, job_id: int = 0, round: int = 0, timeout: float | None = 30.0
) -> Tensor:
    comm = _comm(transport, assignment)
    p = NaiveGatherWorker(comm.node, assignment.topology.host_index, job_id, round, local.data, assignment.workers)
    return Tensor(np.array(comm.drive(p, timeout)), local.logical_len)


def allreduce(
    kind: AlgorithmKind,
    local: Tensor,
    assignment: GroupAssignment,
    transport,
    job_id: int = 0,
    round: int = 0,
    timeout: float | None = 30.0,
) -> Tensor:
    if kind.name == "hierarchical":
        return allreduce_hierarchical(local, assignment, transport, job_id, round, timeout)
    if kind.name == "ring":
        ids = assignment.topology.host_index
        order = sorted(assignment.workers, key=ids.__getitem__)
        return allreduce_ring(local, order, transport, assignment, job_id, round, timeout)
    if kind.name == "hfba":
        return allreduce_hfba(local, assignment, kind.chunk_bytes, transport, job_id, round, timeout=timeout)
    return allreduce_naive(local, assignment, transport, job_id, round, timeout)


def job_opener(assignment: GroupAssignment, node: str, closed: set[int]):
    """Builds job state on the first frame of a job this aggregator has not seen."""
    topo = assignment.topology
    ids = topo.host_index
    core = assignment.core_leader
    my_rack = next((r for r, a in assignment.leaders.items() if a == node), None)

    def open_job(frame: AllReduceFrame) -> AggregationJobState | None:
        if frame.job_id in closed:
            return None
        if my_rack is not None and frame.msg_type == MsgType.PUSH_PARTIAL:
            members = tuple(sorted(ids[m] for m in assignment.groups[my_rack]))
            return AggregationJobState(
                frame.job_id,
                frame.round,
                "rack",
                ids[node],
                frozenset(members),
                members,
                ids[core] if core is not None else None,
            )
        if node == core and frame.msg_type == MsgType.GROUP_SUM:
            racks = tuple(sorted(ids[assignment.leaders[r]] for r in assignment.groups))
            return AggregationJobState(frame.job_id, frame.round, "core", ids[node], frozenset(racks), racks)
        return None

    return open_job


def serve_aggregator(
    transport: Transport,
    assignment: GroupAssignment,
    stop: threading.Event,
    straggler_timeout_s: float = 5.0,
    poll_s: float = 0.05,
    keep_done: int = 64,
) -> AggregationServer:
    """Aggregation-server main loop: one thread mutates all job state."""
    topo = assignment.topology
    hosts = topo.hosts
    closed: set[int] = set()
    server = AggregationServer(topo.host_index[transport.node], job_opener(assignment, transport.node, closed))
    opened_at: dict[int, float] = {}
    done_order: deque[int] = deque()

    def send_all(outbound):
        for dst, frame in outbound:
            try:
                transport.send(hosts[dst], frame)
            except TransportError as exc:
                log.warning("%s: cannot reach %s: %s", transport.node, hosts[dst], exc)

    while not stop.is_set():
        try:
            frame = transport.recv(poll_s)
        except TransportTimeout:
            frame = None
        now = time.monotonic()
        if frame is not None:
            send_all(server.handle(frame))
            opened_at.setdefault(frame.job_id, now)
        for job_id, state in list(server.jobs.items()):
            if state.phase == Phase.COLLECTING and now - opened_at.get(job_id, now) > straggler_timeout_s:
                send_all(straggler_check(state))
                if isinstance(state.error, StragglerTimeoutError):
                    log.error("%s: %s", transport.node, state.error)
            if state.phase in (Phase.DONE, Phase.ABORTED) and job_id not in closed:
                closed.add(job_id)
                done_order.append(job_id)
        while len(done_order) > keep_done:
            old = done_order.popleft()
            server.jobs.pop(old, None)
            opened_at.pop(old, None)
    return server
