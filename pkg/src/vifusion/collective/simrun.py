"""Run one AllReduce of any algorithm on the simulated network."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from ..errors import CollectiveError, InvalidInputError
from ..tensor import DTYPE, Tensor
from ..topology import GroupAssignment, Topology, partition_groups
from ..transport.sim import Delivery, SimNetwork
from .aggregator import AggregationJobState, AggregationServer
from .algorithms import (
    AggregatorNode,
    AlgorithmKind,
    HfbaWorker,
    HierarchicalWorker,
    NaiveGatherWorker,
    Participant,
    RingWorker,
)
from .frame import MsgType


@dataclass(frozen=True)
class SimConfig:
    """Host-side summation is slower than the dedicated aggregation path."""

    host_reduce_bytes_per_s: float = 5e9
    agg_reduce_bytes_per_s: float = 50e9
    straggler_timeout_s: float = 5.0
    hfba_window: int = 1


@dataclass
class AllReduceRun:
    algorithm: AlgorithmKind
    outputs: dict[str, np.ndarray]
    elapsed_s: float
    net: SimNetwork
    participants: dict[str, Participant] = field(repr=False, default_factory=dict)

    @property
    def transcript(self) -> list[Delivery]:
        return self.net.transcript

    def inter_rack_payload_messages(self) -> dict[tuple[str | None, str | None], int]:
        """Count payload-bearing deliveries crossing a rack boundary, keyed by
        (source rack, destination rack)."""
        rack = self.net.topology.rack_of
        out: dict[tuple[str | None, str | None], int] = {}
        for d in self.net.transcript:
            if d.crosses_rack and d.payload_bytes > 0:
                key = (rack.get(d.src), rack.get(d.dst))
                out[key] = out.get(key, 0) + 1
        return out


def ring_order(topology: Topology, workers: Iterable[str]) -> list[str]:
    ids = topology.host_index
    return sorted(workers, key=ids.__getitem__)


def _as_array(x) -> np.ndarray:
    if isinstance(x, Tensor):
        return x.data
    return np.ascontiguousarray(x, dtype=DTYPE)


def simulate_allreduce(
    algorithm: AlgorithmKind,
    inputs: Mapping[str, Tensor | np.ndarray],
    topology: Topology,
    config: SimConfig = SimConfig(),
    job_id: int = 1,
    round: int = 0,
    absent: Iterable[str] = (),
    disconnected: Iterable[str] = (),
    record: bool = True,
    record_channels: bool = False,
) -> AllReduceRun:
    """Every worker in ``inputs`` starts at virtual time 0; ``elapsed_s`` is
    when the last one holds the result. Workers listed in ``absent`` belong to
    the job but never call in; ``disconnected`` nodes are offline."""
    absent = set(absent)
    workers = ring_order(topology, list(inputs) + [w for w in absent if w not in inputs])
    if not workers:
        raise InvalidInputError("no workers")
    assignment = partition_groups(topology, workers)
    ids = topology.host_index
    net = SimNetwork(topology, record=record, record_channels=record_channels)
    arrays = {w: _as_array(t) for w, t in inputs.items()}

    participants: dict[str, Participant] = {}
    for w in workers:
        if w in absent:
            net.register(w, None)
            continue
        local = arrays[w]
        if algorithm.name == "hierarchical":
            p = HierarchicalWorker(w, ids, job_id, round, local, assignment.leaders[assignment.group_of(w)])
        elif algorithm.name == "ring":
            p = RingWorker(w, ids, job_id, round, local, workers)
        elif algorithm.name == "hfba":
            group = sorted(assignment.groups[assignment.group_of(w)], key=ids.__getitem__)
            leaders = [sorted(g, key=ids.__getitem__)[0] for g in assignment.groups.values()]
            p = HfbaWorker(w, ids, job_id, round, local, group, leaders, algorithm.chunk_bytes, config.hfba_window)
        else:
            p = NaiveGatherWorker(w, ids, job_id, round, local, workers)
        participants[w] = p
        net.register(w, p, reduce_rate=config.host_reduce_bytes_per_s)

    aggregators: dict[str, AggregatorNode] = {}
    if algorithm.name == "hierarchical":
        _setup_aggregators(net, assignment, job_id, round, config, aggregators)

    for node in disconnected:
        net.kill(node)
    for w in workers:
        if w in participants and w not in disconnected:
            participants[w].start(net.context(w))
    try:
        net.run()
    finally:
        net.detach()

    errors = [e for a in aggregators.values() for e in a.server.errors()]
    if errors:
        raise errors[0]
    for p in participants.values():
        if p.error is not None:
            raise p.error
    missing = [w for w, p in participants.items() if not p.done and w not in disconnected]
    if missing:
        raise CollectiveError(f"{algorithm.label}: workers {missing} never completed")
    outputs = {w: p.result for w, p in participants.items() if p.result is not None}
    elapsed = max((p.finished_at for p in participants.values() if p.finished_at is not None), default=0.0)
    return AllReduceRun(algorithm, outputs, elapsed, net, participants)


def _setup_aggregators(net, assignment: GroupAssignment, job_id, round, config, out) -> None:
    topo = assignment.topology
    ids = topo.host_index
    core = assignment.core_leader
    for rack, members in assignment.groups.items():
        agg = assignment.leaders[rack]
        node = AggregatorNode(agg, topo.hosts, AggregationServer(ids[agg]), config.straggler_timeout_s)
        net.register(agg, node, reduce_rate=config.agg_reduce_bytes_per_s)
        member_ids = tuple(sorted(ids[m] for m in members))
        node.register(
            net.context(agg),
            AggregationJobState(
                job_id=job_id,
                round=round,
                tier="rack",
                self_id=ids[agg],
                expected_senders=frozenset(member_ids),
                downstream=member_ids,
                upstream=ids[core] if core is not None else None,
            ),
        )
        out[agg] = node
    if core is not None:
        node = AggregatorNode(core, topo.hosts, AggregationServer(ids[core]), config.straggler_timeout_s)
        net.register(core, node, reduce_rate=config.agg_reduce_bytes_per_s)
        rack_ids = tuple(sorted(ids[assignment.leaders[r]] for r in assignment.groups))
        node.register(
            net.context(core),
            AggregationJobState(
                job_id=job_id,
                round=round,
                tier="core",
                self_id=ids[core],
                expected_senders=frozenset(rack_ids),
                downstream=rack_ids,
            ),
        )
        out[core] = node


PAYLOAD_TYPES = (MsgType.PUSH_PARTIAL, MsgType.GROUP_SUM, MsgType.GLOBAL_SUM, MsgType.BROADCAST)
