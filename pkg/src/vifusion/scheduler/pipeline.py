"""Pipelined dispatch of fused batches across model shards."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Protocol, Sequence

from ..tensor import unfuse
from .fusion import NS_PER_S, FusionBatch
from .sharding import ShardPlan


class StageError(RuntimeError):
    pass


class ShardExecutor(Protocol):
    n_shards: int

    def run_stage(self, shard: int, batch: FusionBatch) -> float:
        """Execute one stage and return its duration in seconds."""
        ...


@dataclass
class CostModelExecutor:
    """Stage time = fixed launch overhead + shard compute units x bytes x rate."""

    plan: ShardPlan
    overhead_s: float = 2e-3
    seconds_per_unit_byte: float = 5e-9
    fail: Callable[[int, FusionBatch], bool] | None = None

    @property
    def n_shards(self) -> int:
        return self.plan.n_shards

    def stage_time(self, shard: int, nbytes: int) -> float:
        return self.overhead_s + self.plan.per_shard_compute[shard] * nbytes * self.seconds_per_unit_byte

    def run_stage(self, shard: int, batch: FusionBatch) -> float:
        if self.fail is not None and self.fail(shard, batch):
            raise StageError(f"stage {shard} failed on batch {batch.batch_id}")
        return self.stage_time(shard, batch.nbytes)


@dataclass
class CallableExecutor:
    """Runs real callables per stage and reports their wall-clock duration."""

    stages: Sequence[Callable[[FusionBatch], object]]

    @property
    def n_shards(self) -> int:
        return len(self.stages)

    def run_stage(self, shard: int, batch: FusionBatch) -> float:
        t0 = time.perf_counter()
        try:
            self.stages[shard](batch)
        except Exception as exc:
            raise StageError(f"stage {shard} failed on batch {batch.batch_id}: {exc}") from exc
        return time.perf_counter() - t0


@dataclass(frozen=True)
class StageRecord:
    batch_id: int
    shard: int
    start_s: float
    end_s: float


@dataclass(frozen=True)
class QueryCompletion:
    query_id: int
    batch_id: int
    arrival_s: float
    completion_s: float
    error: str | None = None

    @property
    def latency_s(self) -> float:
        return self.completion_s - self.arrival_s


@dataclass
class DispatchLog:
    stages: list[StageRecord] = field(default_factory=list)
    shard_free_s: list[float] = field(default_factory=list)

    @property
    def makespan_s(self) -> float:
        return max((r.end_s for r in self.stages), default=0.0)


def run_dispatch_loop(
    batches: Iterable[FusionBatch],
    plan: ShardPlan,
    executor: ShardExecutor,
    log: DispatchLog | None = None,
) -> Iterator[QueryCompletion]:
    """Push batches through the shard pipeline in emission order.

    A batch holds shard k only while stage k runs and moves on as soon as it
    finishes; the next batch enters a shard the moment that shard frees. A
    failing stage drops its batch (queries complete with an error) and frees
    the shard for the next batch.
    """
    n = plan.n_shards
    if executor.n_shards != n:
        raise ValueError(f"executor has {executor.n_shards} shards, plan has {n}")
    if log is None:
        log = DispatchLog()
    log.shard_free_s = [0.0] * n
    free = log.shard_free_s
    for batch in batches:
        t = batch.emitted_at_ns / NS_PER_S
        error = None
        for k in range(n):
            start = max(t, free[k])
            try:
                duration = executor.run_stage(k, batch)
            except StageError as exc:
                error = str(exc)
                free[k] = start
                t = start
                break
            t = start + duration
            free[k] = t
            log.stages.append(StageRecord(batch.batch_id, k, start, t))
        if error is None and batch.fused is not None:
            # results go back per query with padding stripped
            unfuse(batch.fused)
        for seg in batch.segments:
            yield QueryCompletion(seg.query_id, batch.batch_id, seg.arrival_time / NS_PER_S, t, error)
