"""Run configuration: one JSON file holding the benchmark, fusion policy,
simulation and topology settings."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..collective.algorithms import ALL_KINDS, AlgorithmKind
from ..collective.simrun import SimConfig
from ..errors import ConfigurationError
from ..scheduler.fusion import FusionPolicy
from ..scheduler.sharding import DEFAULT_LAMBDA
from ..topology import Topology, default_topology

KiB = 1024
MiB = 1024 * KiB


def default_sizes() -> tuple[int, ...]:
    return tuple(32 * KiB << i for i in range(11))


@dataclass(frozen=True)
class LatencyConfig:
    """Poisson query stream and the per-stage cost model it runs against."""

    rate_per_s: float = 40.0
    queries: int = 1000
    min_query_bytes: int = 16 * KiB
    max_query_bytes: int = 64 * KiB
    num_layers: int = 32
    n_shards: int = 8
    stage_overhead_s: float = 2e-3
    seconds_per_unit_byte: float = 5e-9
    saturation_window: int = 100

    def __post_init__(self):
        if self.rate_per_s <= 0 or self.queries < 1:
            raise ConfigurationError("latency: rate and query count must be positive")
        if not 4 <= self.min_query_bytes <= self.max_query_bytes:
            raise ConfigurationError("latency: need 4 <= min_query_bytes <= max_query_bytes")
        if self.n_shards < 1 or self.num_layers < self.n_shards:
            raise ConfigurationError("latency: need 1 <= n_shards <= num_layers")


@dataclass(frozen=True)
class RealConfig:
    host: str = "127.0.0.1"
    base_port: int = 29500
    timeout_s: float = 120.0


@dataclass(frozen=True)
class BenchmarkConfig:
    algorithms: tuple[AlgorithmKind, ...] = ALL_KINDS
    workers: tuple[int, ...] = (4, 8)
    tensor_sizes_bytes: tuple[int, ...] = field(default_factory=default_sizes)
    iterations: int = 1
    warmup: int = 0
    topology_path: str | None = None
    policy: FusionPolicy = FusionPolicy(capacity_bytes=128 * KiB)
    lam: float = DEFAULT_LAMBDA
    seed: int = 0
    sim: SimConfig = SimConfig()
    latency: LatencyConfig = LatencyConfig()
    real: RealConfig = RealConfig()
    base_dir: str = field(default=".", compare=False)

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigurationError("iterations must be >= 1")
        if self.warmup < 0:
            raise ConfigurationError("warmup must be >= 0")
        sizes = self.tensor_sizes_bytes
        if not sizes or any(s <= 0 or s % 4 for s in sizes):
            raise ConfigurationError("tensor sizes must be positive multiples of 4 bytes")
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ConfigurationError("tensor sizes must be strictly ascending")
        if not self.workers or any(w < 1 for w in self.workers):
            raise ConfigurationError("worker counts must be >= 1")
        if not self.algorithms:
            raise ConfigurationError("no algorithms selected")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed must fit in 64 bits")

    def topology(self, workers: int) -> Topology:
        """Topology for a ``workers``-sized run. A configured file must hold at
        least that many workers; the first ones in host order take part."""
        if self.topology_path is None:
            return default_topology(workers)
        path = Path(self.topology_path)
        if not path.is_absolute():
            path = Path(self.base_dir) / path
        topo = Topology.load(path)
        if len(topo.workers()) < workers:
            raise ConfigurationError(f"{path} has {len(topo.workers())} workers, run needs {workers}")
        return topo

    def participants(self, workers: int) -> tuple[Topology, list[str]]:
        topo = self.topology(workers)
        return topo, topo.workers()[:workers]

    def to_dict(self) -> dict[str, Any]:
        return {
            "algorithms": [k.label for k in self.algorithms],
            "workers": list(self.workers),
            "tensor_sizes_bytes": list(self.tensor_sizes_bytes),
            "iterations": self.iterations,
            "warmup": self.warmup,
            "topology": self.topology_path,
            "policy": {
                "capacity_bytes": self.policy.capacity_bytes,
                "fill_fraction": self.policy.fill_fraction,
                "deadline_ms": self.policy.deadline_s * 1e3,
                "lambda": self.lam,
            },
            "seed": self.seed,
            "sim": dataclasses.asdict(self.sim),
            "latency": dataclasses.asdict(self.latency),
            "real": dataclasses.asdict(self.real),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any], base_dir: str = ".") -> BenchmarkConfig:
        known = {"algorithms", "workers", "tensor_sizes_bytes", "iterations", "warmup", "topology", "policy", "seed", "sim", "latency", "real"}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        kw: dict[str, Any] = {"base_dir": base_dir}
        try:
            if "algorithms" in d:
                algos = d["algorithms"]
                kw["algorithms"] = tuple(AlgorithmKind.parse(a) for a in ([algos] if isinstance(algos, str) else algos))
            if "workers" in d:
                w = d["workers"]
                kw["workers"] = (int(w),) if isinstance(w, int) else tuple(int(x) for x in w)
            if "tensor_sizes_bytes" in d:
                kw["tensor_sizes_bytes"] = tuple(int(s) for s in d["tensor_sizes_bytes"])
            for key in ("iterations", "warmup", "seed"):
                if key in d:
                    kw[key] = int(d[key])
            if "topology" in d:
                kw["topology_path"] = d["topology"]
            if "policy" in d:
                p = dict(d["policy"])
                lam = p.pop("lambda", DEFAULT_LAMBDA)
                deadline_ms = p.pop("deadline_ms", 150.0)
                kw["policy"] = FusionPolicy(deadline_s=deadline_ms / 1e3, **p)
                kw["lam"] = float(lam)
            if "sim" in d:
                kw["sim"] = SimConfig(**d["sim"])
            if "latency" in d:
                kw["latency"] = LatencyConfig(**d["latency"])
            if "real" in d:
                kw["real"] = RealConfig(**d["real"])
        except TypeError as exc:
            raise ConfigurationError(f"bad config: {exc}") from exc
        return cls(**kw)

    @classmethod
    def load(cls, path: str | Path) -> BenchmarkConfig:
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: {exc}") from exc
        return cls.from_dict(data, base_dir=str(path.parent))
