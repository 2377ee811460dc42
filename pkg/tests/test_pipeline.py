import pytest
from hypothesis import given, strategies as st

from vifusion.scheduler import (
    CallableExecutor,
    CostModelExecutor,
    DispatchLog,
    FusionBatch,
    LayerProfile,
    StageError,
    plan_shards,
    run_dispatch_loop,
)
from vifusion.tensor import SegmentDescriptor, Tensor, fuse

NS = 1_000_000_000


def batch(bid, t_s=0.0, queries=(0,), nbytes=64):
    segs = [SegmentDescriptor(q, "RGB", round(t_s * NS), nbytes // 4) for q in queries]
    fused = fuse([(d, Tensor.zeros(d.logical_len)) for d in segs])
    return FusionBatch(bid, segs, round(t_s * NS), "fill", fused, fused.buffer.nbytes)


class FixedTimes:
    """Stage k of batch b takes times[b][k] seconds."""

    def __init__(self, times, fail=()):
        self.times = times
        self.fail = set(fail)
        self.n_shards = len(times[0])

    def run_stage(self, shard, b):
        if (b.batch_id, shard) in self.fail:
            raise StageError("boom")
        return self.times[b.batch_id][shard]


def plan_of(n):
    return plan_shards(LayerProfile([1.0] * n, [1.0] * n), n)


def test_two_shards_three_batches_makespan_4t():
    log = DispatchLog()
    T = 1.0
    done = list(run_dispatch_loop([batch(i, 0.0, (i,)) for i in range(3)], plan_of(2), FixedTimes([[T, T]] * 3), log))
    assert log.makespan_s == 4 * T
    assert [c.completion_s for c in done] == [2.0, 3.0, 4.0]


def test_one_shard_is_sequential():
    times = [[0.5], [0.25], [1.0]]
    done = list(run_dispatch_loop([batch(i, 0.0, (i,)) for i in range(3)], plan_of(1), FixedTimes(times)))
    assert [c.completion_s for c in done] == [0.5, 0.75, 1.75]


def test_failed_stage_surfaces_error_and_pipeline_continues():
    times = [[1.0, 1.0]] * 3
    done = list(run_dispatch_loop([batch(i, 0.0, (10 + i,)) for i in range(3)], plan_of(2), FixedTimes(times, fail={(1, 0)})))
    assert [c.error is None for c in done] == [True, False, True]
    assert done[1].query_id == 11
    # the failed batch released shard 0 immediately
    assert done[2].completion_s == 3.0


def test_latency_runs_from_arrival():
    b = batch(0, 0.5, (1, 2))
    done = list(run_dispatch_loop([b], plan_of(2), FixedTimes([[0.1, 0.2]])))
    assert [round(c.latency_s, 12) for c in done] == [0.3, 0.3]


def test_cost_model_stage_time():
    plan = plan_shards(LayerProfile([2.0, 2.0], [1.0]), 2)
    ex = CostModelExecutor(plan, overhead_s=1e-3, seconds_per_unit_byte=1e-6)
    assert ex.stage_time(0, 1000) == pytest.approx(1e-3 + 2.0 * 1000 * 1e-6)


def test_callable_executor_wraps_errors():
    ex = CallableExecutor([lambda b: None, lambda b: 1 / 0])
    with pytest.raises(StageError):
        ex.run_stage(1, batch(0))
    assert ex.run_stage(0, batch(0)) >= 0


def test_shard_count_mismatch():
    with pytest.raises(ValueError):
        list(run_dispatch_loop([batch(0)], plan_of(2), FixedTimes([[1.0]])))


@given(
    st.integers(1, 5).flatmap(
        lambda k: st.lists(
            st.tuples(st.floats(0, 2), st.lists(st.floats(0.001, 1), min_size=k, max_size=k)),
            min_size=1,
            max_size=25,
        )
    )
)
def test_schedule_validity(stream):
    k = len(stream[0][1])
    t, batches, times = 0.0, [], []
    for i, (gap, stage_times) in enumerate(stream):
        t += gap
        batches.append(batch(i, t, (i,)))
        times.append(stage_times)
    log = DispatchLog()
    done = list(run_dispatch_loop(batches, plan_of(k), FixedTimes(times), log))
    assert len(done) == len(batches)
    for shard in range(k):
        recs = [r for r in log.stages if r.shard == shard]
        assert [r.batch_id for r in recs] == sorted(r.batch_id for r in recs)
        for a, b in zip(recs, recs[1:]):
            assert a.end_s <= b.start_s  # never two batches on one shard
    by_batch = {}
    for r in log.stages:
        by_batch.setdefault(r.batch_id, []).append(r)
    for bid, recs in by_batch.items():
        assert recs[0].start_s >= batches[bid].emitted_at_ns / NS - 1e-9
        for a, b in zip(recs, recs[1:]):
            assert b.start_s >= a.end_s  # stage k+1 after stage k
