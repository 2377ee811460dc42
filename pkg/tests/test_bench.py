import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vifusion.bench import (
    BenchmarkConfig,
    BenchmarkRecord,
    LatencySample,
    Mode,
    emit_report,
    read_bandwidth_csv,
    read_latency_csv,
    run_bandwidth_sweep,
    run_latency_experiment,
)
from vifusion.bench.config import KiB, MiB, LatencyConfig, default_sizes
from vifusion.bench.latency import is_saturated, model_profile, poisson_trace
from vifusion.bench.report import BANDWIDTH_HEADER, CDF_PERCENTILES, LATENCY_HEADER
from vifusion.bench.sweep import relative_error, reference, sweep_inputs
from vifusion.collective import AlgorithmKind, SimConfig
from vifusion.errors import ConfigurationError, InvalidInputError
from vifusion.topology import default_topology

from oracles import hfba_time, hierarchical_time

HIER = AlgorithmKind.hierarchical()
HIGH = AlgorithmKind.hfba(1024)


def test_default_sizes_double_from_32k_to_32m():
    sizes = default_sizes()
    assert sizes[0] == 32 * KiB and sizes[-1] == 32 * MiB and len(sizes) == 11
    assert all(b == 2 * a for a, b in zip(sizes, sizes[1:]))


def test_config_round_trip(tmp_path):
    cfg = BenchmarkConfig(workers=(2,), tensor_sizes_bytes=(4096, 8192), seed=5, lam=0.25)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    back = BenchmarkConfig.load(path)
    assert back == cfg
    assert back.to_dict() == cfg.to_dict()


@pytest.mark.parametrize(
    "bad",
    [
        {"iterations": 0},
        {"warmup": -1},
        {"tensor_sizes_bytes": [6]},
        {"tensor_sizes_bytes": [8, 4]},
        {"workers": [0]},
        {"algorithms": []},
        {"algorithms": ["gloo"]},
        {"colour": "blue"},
        {"sim": {"warp": 9}},
        {"latency": {"rate_per_s": 0}},
        {"policy": {"capacity_bytes": 0}},
    ],
)
def test_config_rejects(bad):
    with pytest.raises((ConfigurationError, InvalidInputError)):
        BenchmarkConfig.from_dict(bad)


def test_config_bad_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{nope")
    with pytest.raises(ConfigurationError):
        BenchmarkConfig.load(p)


def test_topology_file_relative_to_config(tmp_path):
    default_topology(8).save(tmp_path / "topo.json")
    (tmp_path / "c.json").write_text(json.dumps({"topology": "topo.json", "workers": [4]}))
    cfg = BenchmarkConfig.load(tmp_path / "c.json")
    topo, names = cfg.participants(4)
    assert names == ["n0", "n1", "n2", "n3"]
    with pytest.raises(ConfigurationError):
        cfg.topology(9)


def test_sweep_inputs_are_seeded():
    a = sweep_inputs(1, ["n0", "n1"], 64, 0)
    b = sweep_inputs(1, ["n0", "n1"], 64, 0)
    c = sweep_inputs(1, ["n0", "n1"], 64, 1)
    assert all(a[w].tobytes() == b[w].tobytes() for w in a)
    assert a["n0"].tobytes() != c["n0"].tobytes()
    assert a["n0"].dtype == np.float32 and a["n0"].shape == (16,)


def test_relative_error_scale():
    ins = [np.array([1.0, -1.0], np.float32), np.array([-1.0, 1.0], np.float32)]
    ref = reference(ins)
    assert relative_error(np.array([0.0, 0.0], np.float32), ref) == 0.0
    assert relative_error(np.array([0.5, 0.0], np.float32), ref) == 0.25


def test_eleven_records_per_algorithm_and_workers():
    cfg = BenchmarkConfig(algorithms=(HIER, AlgorithmKind.ring()), workers=(2,), tensor_sizes_bytes=tuple(4 * KiB << i for i in range(11)))
    recs = run_bandwidth_sweep(cfg)
    assert len(recs) == 22
    for algo in ("hierarchical", "ring"):
        assert [r.tensor_bytes for r in recs if r.algorithm == algo] == list(cfg.tensor_sizes_bytes)


def test_hierarchical_beats_hfba_high_at_one_mib():
    cfg = BenchmarkConfig(algorithms=(HIER, HIGH), workers=(8,), tensor_sizes_bytes=(MiB,))
    recs = {r.algorithm: r for r in run_bandwidth_sweep(cfg)}
    hier, high = recs["hierarchical"], recs["hfba_high"]
    assert hier.algbw_bits_per_s > high.algbw_bits_per_s
    sim = SimConfig()
    t_h = hierarchical_time(MiB, 4, 2, (100e9, 1e-6), (10e9, 5e-6), sim.agg_reduce_bytes_per_s)
    t_f = hfba_time(MiB, 1024, 4, (100e9, 1e-6), (10e9, 5e-6), sim.host_reduce_bytes_per_s)
    assert hier.algbw_bits_per_s / high.algbw_bits_per_s == pytest.approx(t_f / t_h, rel=1e-9)


def test_hierarchical_algbw_grows_with_size():
    cfg = BenchmarkConfig(algorithms=(HIER,), workers=(4,), tensor_sizes_bytes=tuple(KiB << i for i in range(10)))
    bw = [r.algbw_bits_per_s for r in run_bandwidth_sweep(cfg)]
    assert all(b > a for a, b in zip(bw, bw[1:]))


def test_warmup_iterations_are_not_timed():
    cfg = BenchmarkConfig(algorithms=(HIER,), workers=(2,), tensor_sizes_bytes=(4096,), iterations=3, warmup=2)
    (rec,) = run_bandwidth_sweep(cfg)
    assert rec.elapsed_s > 0


def rec(algo="ring", w=4, b=1024, e=1e-3):
    return BenchmarkRecord(algo, w, b, e)


def sample(i=0, mode=Mode.FUSION, lat=0.01):
    return LatencySample(i, 1.0, 1.0 + lat, mode)


def test_empty_records_write_nothing(tmp_path):
    out = tmp_path / "out"
    with pytest.raises(InvalidInputError):
        emit_report([], [sample()], out)
    with pytest.raises(InvalidInputError):
        emit_report([rec()], [], out)
    assert not out.exists() or not any(out.iterdir())


def test_duplicate_records_rejected(tmp_path):
    with pytest.raises(InvalidInputError):
        emit_report([rec(), rec(e=2e-3)], [sample()], tmp_path)
    assert not any(tmp_path.iterdir())


def test_one_record_one_row(tmp_path):
    paths = emit_report([rec()], [sample()], tmp_path, {"seed": 0})
    lines = paths["bandwidth.csv"].read_text().splitlines()
    assert lines[0] == ",".join(BANDWIDTH_HEADER)
    assert len(lines) == 2
    assert paths["latency_cdf.csv"].read_text().splitlines()[0] == ",".join(LATENCY_HEADER)
    assert json.loads(paths["manifest.json"].read_text()) == {"seed": 0}


def test_algbw_definition():
    assert rec(b=1000, e=1e-3).algbw_bits_per_s == 8e6


@settings(max_examples=40)
@given(
    st.lists(
        st.tuples(st.sampled_from(["ring", "hierarchical", "hfba_low"]), st.integers(1, 64), st.integers(1, 2**30), st.floats(1e-9, 1e3)),
        min_size=1,
        max_size=20,
        unique_by=lambda t: t[:3],
    )
)
def test_csv_round_trip(tmp_path_factory, rows):
    out = tmp_path_factory.mktemp("r")
    recs = [BenchmarkRecord(*r) for r in rows]
    paths = emit_report(recs, [sample()], out)
    assert read_bandwidth_csv(paths["bandwidth.csv"]) == recs


def test_latency_table_round_trip(tmp_path):
    samples = [sample(i, Mode.FUSION, 0.001 * (i + 1)) for i in range(100)] + [sample(i, Mode.SYNC, 0.002 * (i + 1)) for i in range(100)]
    paths = emit_report([rec()], samples, tmp_path)
    rows = read_latency_csv(paths["latency_cdf.csv"])
    assert [(m, p) for m, p, _ in rows] == [(m, p) for m in ("FUSION", "SYNC") for p in CDF_PERCENTILES]
    fusion = np.array([s.latency_s for s in samples if s.mode == Mode.FUSION])
    assert dict(((m, p), v) for m, p, v in rows)[("FUSION", 50)] == pytest.approx(np.percentile(fusion, 50))


def small_latency(**kw):
    return BenchmarkConfig(latency=LatencyConfig(**kw))


def test_identical_seeds_identical_traces():
    cfg = small_latency(queries=300)
    assert poisson_trace(cfg) == poisson_trace(cfg)
    a, b = run_latency_experiment(cfg), run_latency_experiment(cfg)
    assert a.samples == b.samples
    assert poisson_trace(dataclasses.replace(cfg, seed=1)) != poisson_trace(cfg)


def test_trace_respects_size_bounds():
    cfg = small_latency(queries=500)
    tr = poisson_trace(cfg)
    assert all(16 * KiB <= q.nbytes <= 64 * KiB and q.nbytes % 4 == 0 for q in tr)
    assert all(a.arrival_ns <= b.arrival_ns for a, b in zip(tr, tr[1:]))
    assert len(model_profile(cfg).compute_cost) == 32


def test_sparse_arrivals_bounded_by_deadline():
    cfg = small_latency(rate_per_s=0.5, queries=200)
    res = run_latency_experiment(cfg)
    fusion, sync = np.median(res.latencies(Mode.FUSION)), np.median(res.latencies(Mode.SYNC))
    tick = cfg.policy.deadline_s / 10
    assert sync <= fusion <= sync + cfg.policy.deadline_s + tick
    assert not any(res.saturated.values())


def test_overload_flags_saturation():
    res = run_latency_experiment(small_latency(rate_per_s=400, queries=600))
    assert res.saturated["SYNC"]


def test_saturation_rule():
    arr = np.arange(200, dtype=float)
    assert not is_saturated(arr, arr + 0.5, 100)
    assert is_saturated(arr, arr * 2 + 1, 100)
    assert not is_saturated(arr[:50], arr[:50] * 2 + 1, 100)
