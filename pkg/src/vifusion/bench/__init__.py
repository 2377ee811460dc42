from .config import BenchmarkConfig, LatencyConfig, RealConfig, default_sizes
from .latency import LatencyResult, run_latency_experiment
from .report import (
    BANDWIDTH_HEADER,
    CDF_PERCENTILES,
    LATENCY_HEADER,
    BenchmarkRecord,
    LatencySample,
    Mode,
    emit_report,
    percentile_table,
    read_bandwidth_csv,
    read_latency_csv,
)
from .suite import run_suite
from .sweep import run_bandwidth_sweep

__all__ = [
    "BANDWIDTH_HEADER",
    "BenchmarkConfig",
    "BenchmarkRecord",
    "CDF_PERCENTILES",
    "LATENCY_HEADER",
    "LatencyConfig",
    "LatencyResult",
    "LatencySample",
    "Mode",
    "RealConfig",
    "default_sizes",
    "emit_report",
    "percentile_table",
    "read_bandwidth_csv",
    "read_latency_csv",
    "run_bandwidth_sweep",
    "run_latency_experiment",
    "run_suite",
]
