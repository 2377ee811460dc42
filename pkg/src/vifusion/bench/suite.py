"""The full benchmark: bandwidth sweep, latency experiment, report."""

from __future__ import annotations

from pathlib import Path

from ..errors import ConfigurationError
from .config import BenchmarkConfig
from .latency import run_latency_experiment
from .report import emit_report
from .sweep import run_bandwidth_sweep

BANDWIDTH_METRIC = "algbw_bps = 8 * tensor_bytes / elapsed_s (input bits per second, median elapsed over timed iterations)"


def run_suite(cfg: BenchmarkConfig, out_dir: str | Path, backend: str = "sim", config_path: str | Path | None = None) -> dict[str, Path]:
    if backend == "sim":
        records = run_bandwidth_sweep(cfg)
    elif backend == "real":
        if config_path is None:
            raise ConfigurationError("the real backend needs the config file path to hand to child processes")
        from .real import launch

        records = launch(config_path, out_dir)
    else:
        raise ConfigurationError(f"unknown backend {backend!r}")
    latency = run_latency_experiment(cfg)
    manifest = {
        "backend": backend,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "bandwidth_metric": BANDWIDTH_METRIC,
        "latency": {
            "time_base": "virtual (stage cost model)",
            "saturated": latency.saturated,
            "fusion_batches": latency.batches,
            "shard_splits": list(latency.plan.split_points),
        },
    }
    return emit_report(records, latency.samples, out_dir, manifest)
