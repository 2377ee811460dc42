"""Bandwidth sweep over tensor sizes on the simulated network."""

from __future__ import annotations

import logging
import statistics
from typing import Callable, Sequence

import numpy as np

from ..collective.simrun import simulate_allreduce
from ..errors import CollectiveError, VifusionError
from ..tensor import ELEMENT_SIZE
from .config import BenchmarkConfig
from .report import BenchmarkRecord

log = logging.getLogger(__name__)

REL_TOL = 1e-6


def worker_input(seed: int, nworkers: int, tensor_bytes: int, iteration: int, index: int) -> np.ndarray:
    """Worker ``index``'s float32 input, uniform on [-1, 1); a pure function
    of its arguments, so every backend and process draws the same data."""
    rng = np.random.default_rng([seed, nworkers, tensor_bytes, iteration, index])
    x = rng.random(tensor_bytes // ELEMENT_SIZE, dtype=np.float32)
    x *= 2
    x -= 1
    return x


def sweep_inputs(seed: int, workers: Sequence[str], tensor_bytes: int, iteration: int) -> dict[str, np.ndarray]:
    return {w: worker_input(seed, len(workers), tensor_bytes, iteration, i) for i, w in enumerate(workers)}


def reference(inputs: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """float64 sum of the inputs and Σ|a_i|, the scale a float32 sum of
    mixed-sign terms can resolve."""
    total = np.zeros(len(inputs[0]))
    scale = np.zeros_like(total)
    for a in inputs:
        np.add(total, a, out=total)
        np.add(scale, np.abs(a), out=scale)
    return total, scale


def relative_error(output: np.ndarray, ref: tuple[np.ndarray, np.ndarray]) -> float:
    """Largest per-element error relative to Σ|a_i|."""
    total, scale = ref
    if not total.size:
        return 0.0
    err = np.subtract(output, total, dtype=np.float64)
    np.abs(err, out=err)
    np.divide(err, scale, out=err, where=scale > 0)
    return float(err.max())


def run_bandwidth_sweep(
    cfg: BenchmarkConfig,
    progress: Callable[[BenchmarkRecord], None] | None = None,
) -> list[BenchmarkRecord]:
    """One record per (algorithm, workers, size): median elapsed of the timed
    iterations after ``cfg.warmup`` untimed ones. Each iteration is its own
    round with fresh seeded inputs shared by every algorithm; every output is
    checked against a float64 reference sum, so all algorithms are held to
    the same answer."""
    records = []
    for nw in cfg.workers:
        topo, workers = cfg.participants(nw)
        for nbytes in cfg.tensor_sizes_bytes:
            times: dict[str, list[float]] = {k.label: [] for k in cfg.algorithms}
            for it in range(cfg.warmup + cfg.iterations):
                inputs = sweep_inputs(cfg.seed, workers, nbytes, it)
                ref = reference(list(inputs.values()))
                for kind in cfg.algorithms:
                    where = f"{kind.label} workers={nw} bytes={nbytes} iteration={it}"
                    try:
                        run = simulate_allreduce(kind, inputs, topo, cfg.sim, job_id=it + 1, round=it, record=False)
                    except VifusionError as exc:
                        raise CollectiveError(f"{where}: {exc}") from exc
                    checked: list[np.ndarray] = []
                    for w in workers:
                        if w not in run.outputs:
                            raise CollectiveError(f"{where}: {w} produced no output")
                        out = run.outputs[w]
                        if any(np.array_equal(out, c) for c in checked):
                            continue
                        rel = relative_error(out, ref)
                        if rel > REL_TOL:
                            raise CollectiveError(f"{where}: {w} off by {rel:.3g} relative to the reference sum")
                        checked.append(out)
                    if it >= cfg.warmup:
                        times[kind.label].append(run.elapsed_s)
                    del run
            for kind in cfg.algorithms:
                rec = BenchmarkRecord(kind.label, nw, nbytes, statistics.median(times[kind.label]))
                log.info("%s W=%d %d B: %.6g s", kind.label, nw, nbytes, rec.elapsed_s)
                if progress is not None:
                    progress(rec)
                records.append(rec)
    return records
