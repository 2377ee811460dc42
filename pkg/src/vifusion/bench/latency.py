"""Query latency under Poisson arrivals: fused pipelined dispatch vs one query
at a time."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..scheduler.fusion import NS_PER_S, FusionBatch, FusionScheduler
from ..scheduler.pipeline import CostModelExecutor, run_dispatch_loop
from ..scheduler.sharding import LayerProfile, ShardPlan, plan_shards
from ..tensor import ELEMENT_SIZE, Modality, SegmentDescriptor, Tensor
from .config import BenchmarkConfig
from .report import Mode, LatencySample, percentile_table

MODALITIES = tuple(m.value for m in Modality)


@dataclass(frozen=True)
class Query:
    query_id: int
    arrival_ns: int
    modality: str
    nbytes: int


@dataclass
class LatencyResult:
    samples: list[LatencySample]
    cdf: list[tuple[str, int, float]]
    saturated: dict[str, bool]
    plan: ShardPlan
    batches: int = 0
    extra: dict = field(default_factory=dict)

    def latencies(self, mode: Mode) -> np.ndarray:
        return np.array([s.latency_s for s in self.samples if s.mode == mode and s.error is None])


def poisson_trace(cfg: BenchmarkConfig) -> list[Query]:
    lc = cfg.latency
    rng = np.random.default_rng([cfg.seed, 7])
    gaps = rng.exponential(1.0 / lc.rate_per_s, lc.queries)
    arrivals = np.round(np.cumsum(gaps) * NS_PER_S).astype(np.int64)
    lo, hi = lc.min_query_bytes // ELEMENT_SIZE, lc.max_query_bytes // ELEMENT_SIZE
    elems = rng.integers(lo, hi, size=lc.queries, endpoint=True)
    mods = rng.integers(0, len(MODALITIES), size=lc.queries)
    return [
        Query(i, int(arrivals[i]), MODALITIES[mods[i]], int(elems[i]) * ELEMENT_SIZE) for i in range(lc.queries)
    ]


def model_profile(cfg: BenchmarkConfig) -> LayerProfile:
    """Seeded per-layer compute units and activation sizes for the served model."""
    lc = cfg.latency
    rng = np.random.default_rng([cfg.seed, 11])
    compute = rng.uniform(0.5, 1.5, lc.num_layers)
    acts = rng.integers(64 * 1024, 1024 * 1024, lc.num_layers - 1, endpoint=True)
    return LayerProfile([float(c) for c in compute], [float(a) for a in acts])


def backlog(arrivals: np.ndarray, completions: np.ndarray) -> np.ndarray:
    """Queries admitted but unfinished, seen by each arrival."""
    done = np.searchsorted(np.sort(completions), arrivals, side="right")
    return np.arange(1, len(arrivals) + 1) - done


def is_saturated(arrivals: np.ndarray, completions: np.ndarray, window: int) -> bool:
    """True when the queue never drained during the last ``window`` arrivals:
    each of them found earlier queries still unfinished. A stable queue
    empties regularly; one fed faster than it is served does not."""
    b = backlog(arrivals, completions) - 1
    if len(b) < window:
        return False
    return bool(b[-window:].min() > 0)


def _tensor(q: Query, rng: np.random.Generator) -> Tensor:
    return Tensor.from_values(rng.standard_normal(q.nbytes // ELEMENT_SIZE, dtype=np.float32))


def run_fusion(cfg: BenchmarkConfig, trace: list[Query], plan: ShardPlan) -> tuple[list[LatencySample], list[FusionBatch]]:
    rng = np.random.default_rng([cfg.seed, 13])
    sched = FusionScheduler(cfg.policy, start_ns=0)
    for q in trace:
        t = _tensor(q, rng)
        sched.submit(SegmentDescriptor(q.query_id, q.modality, q.arrival_ns, t.logical_len), t)
    sched.flush()
    ex = CostModelExecutor(plan, cfg.latency.stage_overhead_s, cfg.latency.seconds_per_unit_byte)
    samples = [
        LatencySample(c.query_id, c.arrival_s, c.completion_s, Mode.FUSION, c.error)
        for c in run_dispatch_loop(sched.batches, plan, ex)
    ]
    samples.sort(key=lambda s: s.query_id)
    return samples, sched.batches


def run_sync(cfg: BenchmarkConfig, trace: list[Query], plan: ShardPlan) -> list[LatencySample]:
    """Each query runs alone through every stage, unpadded, and the next one
    starts only when it has left the last stage."""
    ex = CostModelExecutor(plan, cfg.latency.stage_overhead_s, cfg.latency.seconds_per_unit_byte)
    free = 0.0
    out = []
    for q in trace:
        arrival = q.arrival_ns / NS_PER_S
        t = max(arrival, free)
        for k in range(plan.n_shards):
            t += ex.stage_time(k, q.nbytes)
        free = t
        out.append(LatencySample(q.query_id, arrival, t, Mode.SYNC))
    return out


def run_latency_experiment(cfg: BenchmarkConfig) -> LatencyResult:
    lc = cfg.latency
    trace = poisson_trace(cfg)
    plan = plan_shards(model_profile(cfg), lc.n_shards, cfg.lam)
    fusion, batches = run_fusion(cfg, trace, plan)
    sync = run_sync(cfg, trace, plan)
    samples = fusion + sync
    arrivals = np.array([q.arrival_ns / NS_PER_S for q in trace])
    saturated = {}
    for mode, group in ((Mode.FUSION, fusion), (Mode.SYNC, sync)):
        done = np.array([s.completion_time for s in group])
        saturated[mode.value] = is_saturated(arrivals, done, lc.saturation_window)
    return LatencyResult(samples, percentile_table(samples), saturated, plan, len(batches))
