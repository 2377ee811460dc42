"""Per-participant state machines for every AllReduce algorithm.

Participants are event driven: ``start(ctx)`` kicks them off and
``on_frame(ctx, frame, src)`` feeds them inbound frames. ``ctx`` supplies
``send(dst, frame, delay)``, ``reduce_delay(nbytes)`` and ``now()``; the
simulator and the socket driver both implement it, so the same code runs
on either backend.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import CollectiveError, InvalidInputError, RingAbortedError, TransportError
from ..tensor import DTYPE, ELEMENT_SIZE
from .aggregator import AggregationJobState, AggregationServer, Phase, straggler_check
from .frame import AllReduceFrame, MsgType

HFBA_HIGH_CHUNK = 1024
HFBA_LOW_CHUNK = 4096

ALGORITHMS = ("hierarchical", "ring", "hfba", "naive_gather")


@dataclass(frozen=True)
class AlgorithmKind:
    name: str
    chunk_bytes: int | None = None

    def __post_init__(self):
        if self.name not in ALGORITHMS:
            raise InvalidInputError(f"unknown algorithm {self.name!r}")
        if self.name == "hfba":
            if not self.chunk_bytes or self.chunk_bytes % ELEMENT_SIZE:
                raise InvalidInputError("hfba needs a positive chunk_bytes multiple of 4")
        elif self.chunk_bytes is not None:
            raise InvalidInputError(f"{self.name} takes no chunk size")

    @classmethod
    def hierarchical(cls) -> AlgorithmKind:
        return cls("hierarchical")

    @classmethod
    def ring(cls) -> AlgorithmKind:
        return cls("ring")

    @classmethod
    def hfba(cls, chunk_bytes: int = HFBA_HIGH_CHUNK) -> AlgorithmKind:
        return cls("hfba", chunk_bytes)

    @classmethod
    def naive_gather(cls) -> AlgorithmKind:
        return cls("naive_gather")

    @property
    def label(self) -> str:
        if self.name == "hfba":
            return {HFBA_HIGH_CHUNK: "hfba_high", HFBA_LOW_CHUNK: "hfba_low"}.get(self.chunk_bytes, f"hfba_{self.chunk_bytes}")
        return self.name

    @classmethod
    def parse(cls, text: str) -> AlgorithmKind:
        """Accepts labels such as ``hierarchical``, ``hfba_high``, ``hfba_low``
        or ``hfba:2048``."""
        text = text.strip().lower()
        if text == "hfba_high":
            return cls.hfba(HFBA_HIGH_CHUNK)
        if text == "hfba_low":
            return cls.hfba(HFBA_LOW_CHUNK)
        m = re.fullmatch(r"hfba[:_](\d+)", text)
        if m:
            return cls.hfba(int(m.group(1)))
        return cls(text)

    def __str__(self) -> str:
        return self.label


ALL_KINDS = (
    AlgorithmKind.hierarchical(),
    AlgorithmKind.ring(),
    AlgorithmKind.hfba(HFBA_HIGH_CHUNK),
    AlgorithmKind.hfba(HFBA_LOW_CHUNK),
    AlgorithmKind.naive_gather(),
)


class Participant:
    def __init__(self, node: str, ids: dict[str, int], job_id: int, round: int):
        self.node = node
        self.ids = ids
        self.sender_id = ids[node]
        self.job_id = job_id
        self.round = round
        self.done = False
        self.result: np.ndarray | None = None
        self.error: Exception | None = None
        self.finished_at: float | None = None

    def frame(self, msg_type: MsgType, chunk: int, payload: np.ndarray) -> AllReduceFrame:
        return AllReduceFrame(msg_type, self.job_id, self.round, chunk, self.sender_id, payload)

    def finish(self, ctx, result: np.ndarray) -> None:
        self.result = result
        self.done = True
        self.finished_at = ctx.now()

    def fail(self, ctx, exc: Exception) -> None:
        if self.error is None:
            self.error = exc
        self.done = True
        self.finished_at = ctx.now()

    def check_nack(self, ctx, frame: AllReduceFrame) -> bool:
        if frame.msg_type == MsgType.ACK and frame.error:
            self.fail(ctx, CollectiveError(f"job {frame.job_id}: rejected by sender {frame.sender_id}"))
            return True
        return False

    def start(self, ctx) -> None:
        raise NotImplementedError

    def on_frame(self, ctx, frame: AllReduceFrame, src: str) -> None:
        raise NotImplementedError


# -- in-network hierarchical ---------------------------------------------------


class HierarchicalWorker(Participant):
    """Push to the rack aggregator, wait for its BROADCAST."""

    def __init__(self, node, ids, job_id, round, local: np.ndarray, aggregator: str):
        super().__init__(node, ids, job_id, round)
        self.local = local
        self.aggregator = aggregator

    def start(self, ctx) -> None:
        ctx.send(self.aggregator, self.frame(MsgType.PUSH_PARTIAL, 0, self.local))

    def on_frame(self, ctx, frame, src) -> None:
        if self.done or self.check_nack(ctx, frame):
            return
        if frame.msg_type == MsgType.BROADCAST and frame.job_id == self.job_id:
            self.finish(ctx, frame.payload)


class AggregatorNode:
    """Adapts an AggregationServer to the participant interface and charges
    reduction time on the node's CPU."""

    def __init__(self, node: str, hosts: Sequence[str], server: AggregationServer, straggler_timeout_s: float | None = None):
        self.node = node
        self.hosts = hosts
        self.server = server
        self.straggler_timeout_s = straggler_timeout_s

    def register(self, ctx, state: AggregationJobState) -> None:
        self.server.register(state)
        if self.straggler_timeout_s is not None and state.tier == "rack":
            ctx.call_later(self.straggler_timeout_s, lambda: self._expire(ctx, state))

    def _expire(self, ctx, state: AggregationJobState) -> None:
        self._send(ctx, straggler_check(state), 0.0)

    def _send(self, ctx, outbound, delay: float) -> None:
        for dst, frame in outbound:
            try:
                ctx.send(self.hosts[dst], frame, delay)
            except TransportError:
                pass

    def on_frame(self, ctx, frame, src) -> None:
        state = self.server.jobs.get(frame.job_id)
        before = state.phase if state is not None else None
        outbound = self.server.handle(frame)
        state = self.server.jobs.get(frame.job_id)
        delay = 0.0
        if state is not None and before == Phase.COLLECTING and state.phase in (Phase.FORWARDING, Phase.DONE):
            delay = ctx.reduce_delay((state.operands - 1) * state.payload_len)
        self._send(ctx, outbound, delay)


# -- ring ------------------------------------------------------------------------


def ring_blocks(n_elems: int, n: int) -> list[tuple[int, int]]:
    """n near-equal contiguous blocks (sizes differ by at most one)."""
    edges = [(i * n_elems) // n for i in range(n + 1)]
    return list(zip(edges, edges[1:]))


class RingWorker(Participant):
    """Reduce-scatter then all-gather around a fixed ring order."""

    def __init__(self, node, ids, job_id, round, local: np.ndarray, ring: Sequence[str]):
        super().__init__(node, ids, job_id, round)
        self.ring = list(ring)
        self.n = len(self.ring)
        self.rank = self.ring.index(node)
        self.next = self.ring[(self.rank + 1) % self.n]
        self.acc = np.array(local, dtype=DTYPE, copy=True)
        self.blocks = ring_blocks(self.acc.shape[0], self.n)

    def _send_block(self, ctx, step: int, block: int, delay: float = 0.0) -> None:
        a, b = self.blocks[block]
        msg = MsgType.PUSH_PARTIAL if step < self.n - 1 else MsgType.BROADCAST
        try:
            ctx.send(self.next, self.frame(msg, step, self.acc[a:b].copy()), delay)
        except TransportError as exc:
            self.fail(ctx, RingAbortedError(self.node, self.next, str(exc)))

    def start(self, ctx) -> None:
        if self.n == 1:
            self.finish(ctx, self.acc)
            return
        self._send_block(ctx, 0, self.rank)

    def on_frame(self, ctx, frame, src) -> None:
        if self.done or self.check_nack(ctx, frame):
            return
        n, r = self.n, self.rank
        step = frame.chunk_index
        if step < n - 1:
            block = (r - step - 1) % n
            a, b = self.blocks[block]
            self.acc[a:b] += frame.payload
            delay = ctx.reduce_delay((b - a) * ELEMENT_SIZE)
            self._send_block(ctx, step + 1, block, delay)
            return
        s = step - (n - 1)
        block = (r - s) % n
        a, b = self.blocks[block]
        self.acc[a:b] = frame.payload
        if s == n - 2:
            self.finish(ctx, self.acc)
        else:
            self._send_block(ctx, step + 1, block)


# -- HFBA: chunked, host-summed hierarchical baseline ------------------------------


class HfbaWorker(Participant):
    """Chunked two-tier reduction summed on hosts.

    Each group's first worker leads it; the first group's leader is the
    global leader. A worker keeps at most ``window`` chunks outstanding and
    a chunk's BROADCAST is the acknowledgement that frees a slot.
    """

    def __init__(
        self,
        node,
        ids,
        job_id,
        round,
        local: np.ndarray,
        group: Sequence[str],
        leaders: Sequence[str],
        chunk_bytes: int,
        window: int = 1,
    ):
        super().__init__(node, ids, job_id, round)
        if window < 1:
            raise InvalidInputError("window must be >= 1")
        self.local = local
        self.group = list(group)
        self.leaders = list(leaders)
        self.leader = self.group[0]
        self.global_leader = self.leaders[0]
        self.is_leader = node == self.leader
        self.is_global = node == self.global_leader
        self.members = self.group[1:]
        self.window = window
        step = chunk_bytes // ELEMENT_SIZE
        n = local.shape[0]
        self.bounds = [(i, min(i + step, n)) for i in range(0, n, step)] or [(0, 0)]
        self.out = np.empty(n, dtype=DTYPE)
        self.results = 0
        self.next_push = 0
        # leader bookkeeping
        self.pushes: dict[int, dict[int, np.ndarray]] = {}
        self.group_ready: set[int] = set()
        self.group_sums: dict[int, dict[int, np.ndarray]] = {}
        self._busy = False
        self._again = False

    def chunk(self, c: int) -> np.ndarray:
        a, b = self.bounds[c]
        return self.local[a:b]

    def _record(self, ctx, c: int, payload: np.ndarray) -> None:
        a, b = self.bounds[c]
        self.out[a:b] = payload
        self.results += 1
        if self.results == len(self.bounds):
            self.finish(ctx, self.out)

    def start(self, ctx) -> None:
        if self.is_leader:
            self._leader_progress(ctx)
        else:
            self._member_push(ctx)

    # member side
    def _member_push(self, ctx) -> None:
        while self.next_push < len(self.bounds) and self.next_push < self.results + self.window:
            c = self.next_push
            ctx.send(self.leader, self.frame(MsgType.PUSH_PARTIAL, c, self.chunk(c)))
            self.next_push += 1

    # leader side
    def _own_available(self, c: int) -> bool:
        return c < self.results + self.window

    def _leader_progress(self, ctx) -> None:
        # iterative so a leader with no peers to wait on does not recurse per chunk
        if self._busy:
            self._again = True
            return
        self._busy = True
        try:
            while True:
                self._again = False
                self._leader_step(ctx)
                if not self._again or self.done:
                    break
        finally:
            self._busy = False

    def _leader_step(self, ctx) -> None:
        """Form every group sum whose inputs are all present."""
        for c in range(self.next_push, len(self.bounds)):
            if not self._own_available(c):
                break
            got = self.pushes.get(c, {})
            if len(got) < len(self.members):
                break
            operands = dict(got)
            operands[self.sender_id] = self.chunk(c)
            keys = sorted(operands)
            total = operands[keys[0]].copy()
            for k in keys[1:]:
                total += operands[k]
            self.pushes.pop(c, None)
            self.next_push = c + 1
            delay = ctx.reduce_delay((len(keys) - 1) * total.shape[0] * ELEMENT_SIZE)
            if self.is_global:
                self.group_sums.setdefault(c, {})[0] = total
                self._global_progress(ctx, c, delay)
            else:
                ctx.send(self.global_leader, self.frame(MsgType.GROUP_SUM, c, total), delay)

    def _global_progress(self, ctx, c: int, delay: float = 0.0) -> None:
        sums = self.group_sums.get(c, {})
        if len(sums) < len(self.leaders):
            return
        del self.group_sums[c]
        total = sums[0].copy()
        for g in range(1, len(self.leaders)):
            total += sums[g]
        if len(self.leaders) > 1:
            delay = ctx.reduce_delay((len(self.leaders) - 1) * total.shape[0] * ELEMENT_SIZE)
        for leader in self.leaders[1:]:
            ctx.send(leader, self.frame(MsgType.GLOBAL_SUM, c, total), delay)
        self._broadcast(ctx, c, total, delay)

    def _broadcast(self, ctx, c: int, total: np.ndarray, delay: float = 0.0) -> None:
        for m in self.members:
            ctx.send(m, self.frame(MsgType.BROADCAST, c, total), delay)
        self._record(ctx, c, total)
        if not self.done:
            self._leader_progress(ctx)

    def on_frame(self, ctx, frame, src) -> None:
        if self.done or self.check_nack(ctx, frame):
            return
        c = frame.chunk_index
        t = frame.msg_type
        if t == MsgType.BROADCAST and not self.is_leader:
            self._record(ctx, c, frame.payload)
            if not self.done:
                self._member_push(ctx)
        elif t == MsgType.PUSH_PARTIAL and self.is_leader:
            got = self.pushes.setdefault(c, {})
            got[frame.sender_id] = frame.payload
            # only a push that completes the next chunk can unblock anything
            if c == self.next_push and len(got) == len(self.members):
                self._leader_progress(ctx)
        elif t == MsgType.GROUP_SUM and self.is_global:
            self.group_sums.setdefault(c, {})[self.leaders.index(src)] = frame.payload
            self._global_progress(ctx, c)
        elif t == MsgType.GLOBAL_SUM and self.is_leader:
            self._broadcast(ctx, c, frame.payload)


# -- naive gather ----------------------------------------------------------------


class NaiveGatherWorker(Participant):
    """Everyone sends to the lowest-id worker, which sums and sends back."""

    def __init__(self, node, ids, job_id, round, local: np.ndarray, workers: Sequence[str]):
        super().__init__(node, ids, job_id, round)
        self.local = local
        self.workers = sorted(workers, key=ids.__getitem__)
        self.root = self.workers[0]
        self.got: dict[int, np.ndarray] = {}

    def start(self, ctx) -> None:
        if self.node == self.root:
            self.got[self.sender_id] = self.local
            self._maybe_finish(ctx)
        else:
            ctx.send(self.root, self.frame(MsgType.PUSH_PARTIAL, 0, self.local))

    def _maybe_finish(self, ctx) -> None:
        if len(self.got) < len(self.workers):
            return
        keys = sorted(self.got)
        total = self.got[keys[0]].copy()
        for k in keys[1:]:
            total += self.got[k]
        delay = ctx.reduce_delay((len(keys) - 1) * total.shape[0] * ELEMENT_SIZE)
        for w in self.workers[1:]:
            ctx.send(w, self.frame(MsgType.BROADCAST, 0, total), delay)
        self.finish(ctx, total)

    def on_frame(self, ctx, frame, src) -> None:
        if self.done or self.check_nack(ctx, frame):
            return
        if self.node == self.root and frame.msg_type == MsgType.PUSH_PARTIAL:
            self.got.setdefault(frame.sender_id, frame.payload)
            self._maybe_finish(ctx)
        elif frame.msg_type == MsgType.BROADCAST:
            self.finish(ctx, frame.payload)
