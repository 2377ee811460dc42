"""Multi-process benchmark over real sockets: worker and aggregation-server
roles plus a launcher that spawns them all on this machine."""

from __future__ import annotations

import json
import logging
import signal
import statistics
import subprocess
import sys
import threading
import time
from pathlib import Path


from ..collective.api import Communicator, allreduce, allreduce_hierarchical, serve_aggregator
from ..errors import CollectiveError, ConfigurationError
from ..tensor import Tensor
from ..topology import GroupAssignment, Topology, partition_groups
from ..transport.sockets import SocketTransport
from .config import BenchmarkConfig
from .report import BenchmarkRecord
from .sweep import REL_TOL, reference, relative_error, worker_input

log = logging.getLogger(__name__)


def addresses(cfg: BenchmarkConfig, topo: Topology, run_index: int = 0) -> dict[str, str]:
    base = cfg.real.base_port + 64 * run_index
    return {h: f"{cfg.real.host}:{base + i}" for i, h in enumerate(topo.hosts)}


def _setup(cfg: BenchmarkConfig, workers: int) -> tuple[Topology, list[str], GroupAssignment]:
    if workers not in cfg.workers:
        raise ConfigurationError(f"worker count {workers} is not in the config ({list(cfg.workers)})")
    topo, names = cfg.participants(workers)
    return topo, names, partition_groups(topo, names)


def run_worker(cfg: BenchmarkConfig, worker_id: int, workers: int, out_dir: str | Path | None = None) -> list[BenchmarkRecord]:
    """Timed sweep as seen by one worker. Rounds are fenced by barriers (a
    one-element hierarchical allreduce); elapsed runs from leaving the first
    barrier to leaving the second. Worker 0 writes the records."""
    topo, names, asg = _setup(cfg, workers)
    run_index = cfg.workers.index(workers)
    node = names[worker_id]
    transport = SocketTransport(node, addresses(cfg, topo, run_index), connect_timeout=cfg.real.timeout_s)
    comm = Communicator(transport, topo.hosts)
    timeout = cfg.real.timeout_s
    job = 0

    def next_job() -> int:
        nonlocal job
        job += 1
        return job

    def barrier() -> None:
        allreduce_hierarchical(Tensor.from_values([1.0]), asg, comm, job_id=next_job(), timeout=timeout)

    records = []
    try:
        for nbytes in cfg.tensor_sizes_bytes:
            for kind in cfg.algorithms:
                times = []
                for it in range(cfg.warmup + cfg.iterations):
                    local = Tensor.from_values(worker_input(cfg.seed, workers, nbytes, it, worker_id))
                    barrier()
                    t0 = time.perf_counter()
                    result = allreduce(kind, local, asg, comm, job_id=next_job(), round=it, timeout=timeout)
                    barrier()
                    elapsed = time.perf_counter() - t0
                    if it == 0:
                        ref = reference([worker_input(cfg.seed, workers, nbytes, it, i) for i in range(workers)])
                        rel = relative_error(result.logical, ref)
                        if rel > REL_TOL:
                            raise CollectiveError(f"{kind.label} workers={workers} bytes={nbytes}: {node} off by {rel:.3g}")
                    if it >= cfg.warmup:
                        times.append(elapsed)
                records.append(BenchmarkRecord(kind.label, workers, nbytes, statistics.median(times)))
                log.info("%s %s W=%d %d B: %.6g s", node, kind.label, workers, nbytes, records[-1].elapsed_s)
    finally:
        transport.close()
    if worker_id == 0 and out_dir is not None:
        path = Path(out_dir) / f"records-w{workers}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps([r.__dict__ for r in records]))
    return records


def run_aggregator(cfg: BenchmarkConfig, tier: str, workers: int, rack: str | None = None, stop: threading.Event | None = None) -> None:
    """Serve until ``stop`` is set or SIGTERM/SIGINT arrives."""
    topo, _, asg = _setup(cfg, workers)
    if tier == "core":
        node = asg.core_leader
        if node is None:
            raise ConfigurationError("this run uses a single rack and has no core aggregator")
    elif tier == "rack":
        rack = rack or next(iter(asg.groups))
        if rack not in asg.leaders:
            raise ConfigurationError(f"rack {rack!r} has no workers in this run")
        node = asg.leaders[rack]
    else:
        raise ConfigurationError(f"unknown tier {tier!r}")
    stop = stop or threading.Event()
    if threading.current_thread() is threading.main_thread():
        for sig in (signal.SIGTERM, signal.SIGINT):
            signal.signal(sig, lambda *_: stop.set())
    transport = SocketTransport(node, addresses(cfg, topo, cfg.workers.index(workers)))
    try:
        serve_aggregator(transport, asg, stop, cfg.sim.straggler_timeout_s)
    finally:
        transport.close()


def _cli(*args: str) -> list[str]:
    return [sys.executable, "-m", "vifusion", *args]


def launch(config_path: str | Path, out_dir: str | Path) -> list[BenchmarkRecord]:
    """Spawn every aggregation server and worker for each configured worker
    count, wait for the workers, then collect worker 0's records."""
    cfg = BenchmarkConfig.load(config_path)
    config_path = str(Path(config_path).resolve())
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records: list[BenchmarkRecord] = []
    for workers in cfg.workers:
        _, _, asg = _setup(cfg, workers)
        aggs = []
        for rack in asg.groups:
            aggs.append(subprocess.Popen(_cli("agg", "--tier", "rack", "--rack", rack, "--workers", str(workers), "--config", config_path)))
        if asg.core_leader is not None:
            aggs.append(subprocess.Popen(_cli("agg", "--tier", "core", "--workers", str(workers), "--config", config_path)))
        procs = [
            subprocess.Popen(_cli("worker", "--id", str(i), "--workers", str(workers), "--config", config_path, "--out", str(out_dir)))
            for i in range(workers)
        ]
        try:
            failed = []
            for i, p in enumerate(procs):
                try:
                    code = p.wait(timeout=cfg.real.timeout_s * (1 + len(cfg.tensor_sizes_bytes) * len(cfg.algorithms)))
                except subprocess.TimeoutExpired:
                    code = None
                if code != 0:
                    failed.append((i, code))
            if failed:
                raise CollectiveError(f"workers={workers}: worker processes failed: {failed}")
        finally:
            for p in procs + aggs:
                if p.poll() is None:
                    p.terminate()
            for p in procs + aggs:
                try:
                    p.wait(timeout=10)
                except subprocess.TimeoutExpired:
                    p.kill()
        path = out_dir / f"records-w{workers}.json"
        records.extend(BenchmarkRecord(**d) for d in json.loads(path.read_text()))
        path.unlink()
    return records
