"""Admission buffer with spillover and the dual-threshold batch trigger."""

from __future__ import annotations

import enum
import itertools
import threading
from collections import OrderedDict, deque
from dataclasses import dataclass, field
from typing import Iterable

from ..errors import InvalidInputError, OversizeError
from ..tensor import ELEMENT_SIZE, FusedTensor, SegmentDescriptor, Tensor, fuse, next_pow2

NS_PER_S = 1_000_000_000


@dataclass(frozen=True)
class FusionPolicy:
    capacity_bytes: int
    fill_fraction: float = 0.75
    deadline_s: float = 0.150

    def __post_init__(self):
        if not 0 < self.fill_fraction <= 1:
            raise InvalidInputError(f"fill_fraction must be in (0, 1], got {self.fill_fraction}")
        if self.deadline_s <= 0:
            raise InvalidInputError("deadline must be positive")
        if self.capacity_bytes <= 0:
            raise InvalidInputError("capacity_bytes must be positive")

    @property
    def deadline_ns(self) -> int:
        return round(self.deadline_s * NS_PER_S)

    @property
    def tick_ns(self) -> int:
        # periodic re-evaluation bounds deadline overshoot to 10%
        return max(1, self.deadline_ns // 10)

    @property
    def fill_threshold_bytes(self) -> float:
        return self.fill_fraction * self.capacity_bytes


class Admission(enum.Enum):
    ACCEPTED = "accepted"
    SPILLED = "spilled"


def padded_bytes(t: Tensor) -> int:
    return next_pow2(t.logical_len) * ELEMENT_SIZE


@dataclass
class FusionBatch:
    batch_id: int
    segments: list[SegmentDescriptor]
    emitted_at_ns: int
    reason: str
    fused: FusedTensor | None = None
    nbytes: int = 0

    @property
    def query_ids(self) -> list[int]:
        return [s.query_id for s in self.segments]


class FusionBuffer:
    """Per-modality pending queues plus a FIFO spillover stage.

    Safe for several producer threads and one consumer; all state changes
    happen under one lock.
    """

    def __init__(self, capacity_bytes: int):
        self.capacity_bytes = capacity_bytes
        self.queues: OrderedDict[str, deque[tuple[SegmentDescriptor, Tensor]]] = OrderedDict()
        self.spill: deque[tuple[SegmentDescriptor, Tensor]] = deque()
        self.fill_bytes = 0
        self.spilled_total = 0
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return sum(len(q) for q in self.queues.values())

    @property
    def oldest_arrival(self) -> int | None:
        heads = [q[0][0].arrival_time for q in self.queues.values() if q]
        return min(heads) if heads else None

    def _admit(self, seg: SegmentDescriptor, t: Tensor) -> None:
        self.queues.setdefault(seg.modality, deque()).append((seg, t))
        self.fill_bytes += padded_bytes(t)

    def _readmit(self) -> None:
        while self.spill and self.fill_bytes + padded_bytes(self.spill[0][1]) <= self.capacity_bytes:
            self._admit(*self.spill.popleft())

    def _drain(self) -> list[tuple[SegmentDescriptor, Tensor]]:
        out = []
        for q in self.queues.values():
            out.extend(q)
            q.clear()
        self.fill_bytes = 0
        return out


def enqueue(buffer: FusionBuffer, seg: SegmentDescriptor, t: Tensor) -> Admission:
    if t.logical_len < 1:
        raise InvalidInputError(f"segment {seg.query_id} is empty")
    size = padded_bytes(t)
    if size > buffer.capacity_bytes:
        raise OversizeError(f"segment {seg.query_id} needs {size} B, capacity is {buffer.capacity_bytes} B")
    with buffer._lock:
        # once anything is spilled, later arrivals queue behind it to keep FIFO order
        if buffer.spill or buffer.fill_bytes + size > buffer.capacity_bytes:
            buffer.spill.append((seg, t))
            buffer.spilled_total += 1
            return Admission.SPILLED
        buffer._admit(seg, t)
        return Admission.ACCEPTED


_batch_ids = itertools.count()


def should_fire(buffer: FusionBuffer, policy: FusionPolicy, now_ns: int) -> str | None:
    oldest = buffer.oldest_arrival
    if oldest is None:
        return None
    if buffer.fill_bytes >= policy.fill_threshold_bytes:
        return "fill"
    if now_ns - oldest >= policy.deadline_ns:
        return "deadline"
    return None


def poll_trigger(
    buffer: FusionBuffer, policy: FusionPolicy, now_ns: int, batch_id: int | None = None
) -> FusionBatch | None:
    """Emit one batch holding every pending segment if either threshold is met.

    The buffer is left untouched when neither threshold fires. After a drain,
    spilled segments are re-admitted in arrival order.
    """
    with buffer._lock:
        reason = should_fire(buffer, policy, now_ns)
        if reason is None:
            return None
        pending = buffer._drain()
        buffer._readmit()
    fused = fuse(pending, capacity_bytes=policy.capacity_bytes)
    return FusionBatch(
        batch_id=next(_batch_ids) if batch_id is None else batch_id,
        segments=[d for d, _ in pending],
        emitted_at_ns=now_ns,
        reason=reason,
        fused=fused,
        nbytes=fused.buffer.nbytes,
    )


@dataclass
class FusionScheduler:
    """Drives enqueue/poll over a timestamped arrival trace.

    The trigger is evaluated after every enqueue and on a periodic tick of
    deadline/10 aligned to ``start_ns``.
    """

    policy: FusionPolicy
    start_ns: int = 0
    buffer: FusionBuffer = field(init=False)
    batches: list[FusionBatch] = field(default_factory=list)
    _next_id: int = 0
    _last_tick_ns: int = field(init=False)

    def __post_init__(self):
        self.buffer = FusionBuffer(self.policy.capacity_bytes)
        self._last_tick_ns = self.start_ns

    def _idle(self) -> bool:
        return self.buffer.oldest_arrival is None and not self.buffer.spill

    def _poll(self, now_ns: int) -> None:
        while True:
            batch = poll_trigger(self.buffer, self.policy, now_ns, batch_id=self._next_id)
            if batch is None:
                return
            self._next_id += 1
            self.batches.append(batch)

    def _tick_after(self, t_ns: int) -> int:
        tick = self.policy.tick_ns
        return self.start_ns + ((t_ns - self.start_ns) // tick + 1) * tick

    def advance_to(self, now_ns: int) -> None:
        """Run every periodic tick strictly before ``now_ns``."""
        tick = self._tick_after(self._last_tick_ns)
        while tick < now_ns:
            if self._idle():
                # nothing pending: jump to the last grid point before now
                self._last_tick_ns = self._tick_after(now_ns - 1) - self.policy.tick_ns
                return
            self._poll(tick)
            self._last_tick_ns = tick
            tick = self._tick_after(tick)

    def submit(self, seg: SegmentDescriptor, t: Tensor) -> Admission:
        self.advance_to(seg.arrival_time)
        outcome = enqueue(self.buffer, seg, t)
        self._poll(seg.arrival_time)
        return outcome

    def flush(self) -> None:
        """Keep ticking until every pending and spilled segment is batched."""
        while not self._idle():
            tick = self._tick_after(self._last_tick_ns)
            self._poll(tick)
            self._last_tick_ns = tick

    def run_trace(self, trace: Iterable[tuple[SegmentDescriptor, Tensor]]) -> list[FusionBatch]:
        for seg, t in trace:
            self.submit(seg, t)
        self.flush()
        return self.batches
