"""Result rows, percentile tables and the on-disk report."""

from __future__ import annotations

import csv
import enum
import io
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from ..errors import InvalidInputError

BANDWIDTH_HEADER = ("algorithm", "workers", "tensor_bytes", "elapsed_s", "algbw_bps")
LATENCY_HEADER = ("mode", "percentile", "latency_s")
CDF_PERCENTILES = (1, *range(5, 100, 5), 99)


class Mode(str, enum.Enum):
    FUSION = "FUSION"
    SYNC = "SYNC"


@dataclass(frozen=True)
class BenchmarkRecord:
    algorithm: str
    workers: int
    tensor_bytes: int
    elapsed_s: float

    def __post_init__(self):
        if not self.elapsed_s > 0:
            raise InvalidInputError(f"elapsed must be positive, got {self.elapsed_s}")

    @property
    def algbw_bits_per_s(self) -> float:
        return 8 * self.tensor_bytes / self.elapsed_s

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.algorithm, self.workers, self.tensor_bytes)


@dataclass(frozen=True)
class LatencySample:
    query_id: int
    arrival_time: float
    completion_time: float
    mode: Mode
    error: str | None = None

    @property
    def latency_s(self) -> float:
        return self.completion_time - self.arrival_time


def percentile_table(samples: Iterable[LatencySample], percentiles: Sequence[int] = CDF_PERCENTILES) -> list[tuple[str, int, float]]:
    """(mode, percentile, latency) rows; linear interpolation between order statistics."""
    by_mode: dict[str, list[float]] = {}
    for s in samples:
        if s.error is None:
            by_mode.setdefault(Mode(s.mode).value, []).append(s.latency_s)
    rows = []
    for mode in sorted(by_mode):
        lat = np.asarray(by_mode[mode])
        for p, v in zip(percentiles, np.percentile(lat, percentiles)):
            rows.append((mode, int(p), float(v)))
    return rows


def _check_unique(records: Sequence[BenchmarkRecord]) -> None:
    seen = set()
    for r in records:
        if r.key in seen:
            raise InvalidInputError(f"duplicate record for {r.key}")
        seen.add(r.key)


def _write_atomic(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def bandwidth_csv(records: Sequence[BenchmarkRecord]) -> str:
    return _csv_text(
        BANDWIDTH_HEADER,
        ((r.algorithm, r.workers, r.tensor_bytes, r.elapsed_s, r.algbw_bits_per_s) for r in records),
    )


def latency_csv(samples: Sequence[LatencySample]) -> str:
    return _csv_text(LATENCY_HEADER, percentile_table(samples))


def emit_report(
    records: Sequence[BenchmarkRecord],
    samples: Sequence[LatencySample],
    output_dir: str | Path,
    manifest: dict[str, Any] | None = None,
) -> dict[str, Path]:
    """Write bandwidth.csv, latency_cdf.csv and manifest.json.

    All content is rendered before anything touches the disk, and each file
    is swapped in atomically, so bad input leaves no partial files.
    """
    if not records:
        raise InvalidInputError("no bandwidth records to report")
    if not samples or not any(s.error is None for s in samples):
        raise InvalidInputError("no latency samples to report")
    _check_unique(records)
    texts = {
        "bandwidth.csv": bandwidth_csv(records),
        "latency_cdf.csv": latency_csv(samples),
        "manifest.json": json.dumps(manifest or {}, indent=2, sort_keys=True) + "\n",
    }
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, text in texts.items():
        paths[name] = out / name
        _write_atomic(paths[name], text)
    return paths


def read_bandwidth_csv(path: str | Path) -> list[BenchmarkRecord]:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or tuple(rows[0]) != BANDWIDTH_HEADER:
        raise InvalidInputError(f"{path}: unexpected header {rows[:1]}")
    return [BenchmarkRecord(a, int(w), int(b), float(e)) for a, w, b, e, _ in rows[1:]]


def read_latency_csv(path: str | Path) -> list[tuple[str, int, float]]:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or tuple(rows[0]) != LATENCY_HEADER:
        raise InvalidInputError(f"{path}: unexpected header {rows[:1]}")
    return [(m, int(p), float(v)) for m, p, v in rows[1:]]
