"""Tree datacenter topology (host -> ToR -> core) and rack-aligned grouping."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigurationError, InvalidInputError, UnreachableError

DEFAULT_INTRA_BPS = 100e9
DEFAULT_INTER_BPS = 10e9
DEFAULT_INTRA_LATENCY_S = 1e-6
DEFAULT_INTER_LATENCY_S = 5e-6


@dataclass(frozen=True)
class Node:
    node_id: str
    rack_id: str


@dataclass(frozen=True)
class Link:
    endpoint_a: str
    endpoint_b: str
    bandwidth_bits_per_s: float
    latency_s: float


@dataclass(frozen=True)
class Aggregator:
    node_id: str
    tier: str  # "rack" | "core"
    rack_id: str | None = None


@dataclass(frozen=True, eq=False)
class Topology:
    nodes: tuple[Node, ...]
    links: tuple[Link, ...]
    aggregators: tuple[Aggregator, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "links", tuple(self.links))
        object.__setattr__(self, "aggregators", tuple(self.aggregators))
        self.validate()

    # -- structure -------------------------------------------------------
    @cached_property
    def racks(self) -> tuple[str, ...]:
        seen = dict.fromkeys(n.rack_id for n in self.nodes)
        return tuple(seen)

    @cached_property
    def hosts(self) -> tuple[str, ...]:
        """Workers then aggregators; a host's index is its wire sender_id."""
        return tuple(n.node_id for n in self.nodes) + tuple(a.node_id for a in self.aggregators)

    @cached_property
    def host_index(self) -> dict[str, int]:
        return {h: i for i, h in enumerate(self.hosts)}

    @cached_property
    def rack_of(self) -> dict[str, str | None]:
        out: dict[str, str | None] = {n.node_id: n.rack_id for n in self.nodes}
        for a in self.aggregators:
            out[a.node_id] = a.rack_id if a.tier == "rack" else None
        return out

    @cached_property
    def rack_aggregator(self) -> dict[str, str]:
        return {a.rack_id: a.node_id for a in self.aggregators if a.tier == "rack"}

    @cached_property
    def core_aggregator(self) -> str | None:
        core = [a.node_id for a in self.aggregators if a.tier == "core"]
        return core[0] if core else None

    @cached_property
    def _adjacency(self) -> dict[str, list[tuple[str, Link]]]:
        adj: dict[str, list[tuple[str, Link]]] = {}
        for link in self.links:
            adj.setdefault(link.endpoint_a, []).append((link.endpoint_b, link))
            adj.setdefault(link.endpoint_b, []).append((link.endpoint_a, link))
        return adj

    @property
    def endpoints(self) -> set[str]:
        return set(self._adjacency) | set(self.hosts)

    def validate(self) -> None:
        ids = [n.node_id for n in self.nodes] + [a.node_id for a in self.aggregators]
        if len(set(ids)) != len(ids):
            raise ConfigurationError("duplicate node ids in topology")
        for link in self.links:
            if link.bandwidth_bits_per_s <= 0 or link.latency_s < 0:
                raise ConfigurationError(f"link {link.endpoint_a}-{link.endpoint_b} has non-positive bandwidth")
        racks = set(self.racks)
        for a in self.aggregators:
            if a.tier not in ("rack", "core"):
                raise ConfigurationError(f"aggregator {a.node_id} has unknown tier {a.tier!r}")
            if a.tier == "rack" and a.rack_id not in racks:
                raise ConfigurationError(f"aggregator {a.node_id} bound to unknown rack {a.rack_id!r}")
        per_rack = [a.rack_id for a in self.aggregators if a.tier == "rack"]
        if len(per_rack) != len(set(per_rack)):
            raise ConfigurationError("a rack has more than one rack-level aggregator")
        if len([a for a in self.aggregators if a.tier == "core"]) > 1:
            raise ConfigurationError("more than one core-level aggregator")
        vertices = self.endpoints
        if not self.links and len(vertices) <= 1:
            return
        if len(self.links) != len(vertices) - 1:
            raise ConfigurationError("topology must be a tree (links = endpoints - 1)")
        start = next(iter(sorted(vertices)))
        if len(self._bfs(start)) != len(vertices):
            raise ConfigurationError("link graph is not connected")

    def _bfs(self, src: str) -> dict[str, tuple[str, Link] | None]:
        parent: dict[str, tuple[str, Link] | None] = {src: None}
        queue = deque([src])
        while queue:
            u = queue.popleft()
            for v, link in self._adjacency.get(u, ()):
                if v not in parent:
                    parent[v] = (u, link)
                    queue.append(v)
        return parent

    def path(self, src: str, dst: str) -> list[tuple[str, str, Link]]:
        """Directed hops (from, to, link) along the unique tree path."""
        return list(self._path_cached(src, dst))

    def _path_cached(self, src: str, dst: str) -> tuple[tuple[str, str, Link], ...]:
        cache = self.__dict__.setdefault("_path_cache", {})
        key = (src, dst)
        if key in cache:
            return cache[key]
        if src not in self.endpoints or dst not in self.endpoints:
            raise UnreachableError(f"unknown endpoint in {src} -> {dst}")
        parent = self._bfs(src)
        if dst not in parent:
            raise UnreachableError(f"no path {src} -> {dst}")
        hops = []
        v = dst
        while parent[v] is not None:
            u, link = parent[v]
            hops.append((u, v, link))
            v = u
        cache[key] = tuple(reversed(hops))
        return cache[key]

    def crosses_rack(self, src: str, dst: str) -> bool:
        return self.rack_of.get(src) != self.rack_of.get(dst)

    # -- serialization ---------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "nodes": [{"node_id": n.node_id, "rack_id": n.rack_id} for n in self.nodes],
            "links": [
                {
                    "endpoint_a": l.endpoint_a,
                    "endpoint_b": l.endpoint_b,
                    "bandwidth_bits_per_s": l.bandwidth_bits_per_s,
                    "latency_s": l.latency_s,
                }
                for l in self.links
            ],
            "aggregators": [{"node_id": a.node_id, "tier": a.tier, "rack_id": a.rack_id} for a in self.aggregators],
        }

    @classmethod
    def from_dict(cls, d: dict) -> Topology:
        try:
            return cls(
                nodes=tuple(Node(n["node_id"], n["rack_id"]) for n in d["nodes"]),
                links=tuple(
                    Link(l["endpoint_a"], l["endpoint_b"], float(l["bandwidth_bits_per_s"]), float(l["latency_s"]))
                    for l in d["links"]
                ),
                aggregators=tuple(Aggregator(a["node_id"], a["tier"], a.get("rack_id")) for a in d.get("aggregators", ())),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"malformed topology: {exc}") from exc

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> Topology:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def workers(self) -> list[str]:
        return [n.node_id for n in self.nodes]


def build_tree_topology(
    racks: int,
    workers_per_rack: int | Sequence[int],
    intra_bps: float = DEFAULT_INTRA_BPS,
    inter_bps: float = DEFAULT_INTER_BPS,
    intra_latency_s: float = DEFAULT_INTRA_LATENCY_S,
    inter_latency_s: float = DEFAULT_INTER_LATENCY_S,
) -> Topology:
    """Workers n0..nW-1 under ToR switches tor<r>, one aggregator a<r> per rack,
    ToRs joined by a core switch carrying the core aggregator c0."""
    if isinstance(workers_per_rack, int):
        counts = [workers_per_rack] * racks
    else:
        counts = list(workers_per_rack)
    if len(counts) != racks or racks < 1 or any(c < 1 for c in counts):
        raise InvalidInputError("need at least one worker in every rack")
    nodes, links, aggs = [], [], []
    w = 0
    for r, count in enumerate(counts):
        tor = f"tor{r}"
        for _ in range(count):
            nodes.append(Node(f"n{w}", f"r{r}"))
            links.append(Link(f"n{w}", tor, intra_bps, intra_latency_s))
            w += 1
        aggs.append(Aggregator(f"a{r}", "rack", f"r{r}"))
        links.append(Link(f"a{r}", tor, intra_bps, intra_latency_s))
        if racks > 1:
            links.append(Link(tor, "core", inter_bps, inter_latency_s))
    if racks > 1:
        aggs.append(Aggregator("c0", "core", None))
        links.append(Link("c0", "core", intra_bps, intra_latency_s))
    return Topology(tuple(nodes), tuple(links), tuple(aggs))


def default_topology(workers: int, **kw) -> Topology:
    """Two racks splitting the workers evenly (one rack for a single worker)."""
    if workers < 1:
        raise InvalidInputError("need at least one worker")
    if workers == 1:
        return build_tree_topology(1, 1, **kw)
    first = (workers + 1) // 2
    return build_tree_topology(2, [first, workers - first], **kw)


@dataclass(frozen=True)
class GroupAssignment:
    groups: dict[str, tuple[str, ...]]
    leaders: dict[str, str]
    core_leader: str | None
    topology: Topology = field(repr=False, compare=False)

    @property
    def workers(self) -> list[str]:
        return [w for g in self.groups.values() for w in g]

    def group_of(self, worker: str) -> str:
        return self.topology.rack_of[worker]

    def sender_id(self, node: str) -> int:
        return self.topology.host_index[node]


def partition_groups(topo: Topology, workers: Iterable[str]) -> GroupAssignment:
    workers = list(workers)
    if not workers:
        raise InvalidInputError("empty worker list")
    known = {n.node_id: n.rack_id for n in topo.nodes}
    groups: dict[str, list[str]] = {}
    for w in workers:
        if w not in known:
            raise InvalidInputError(f"worker {w} not in topology")
        groups.setdefault(known[w], []).append(w)
    if len(set(workers)) != len(workers):
        raise InvalidInputError("duplicate worker ids")
    ordered = {r: tuple(groups[r]) for r in topo.racks if r in groups}
    leaders = {}
    for rack in ordered:
        if rack not in topo.rack_aggregator:
            raise ConfigurationError(f"rack {rack} has workers but no aggregation node")
        leaders[rack] = topo.rack_aggregator[rack]
    core = None
    if len(ordered) >= 2:
        core = topo.core_aggregator
        if core is None:
            raise ConfigurationError("multiple racks in use but no core aggregation node")
    return GroupAssignment(ordered, leaders, core, topo)


def estimate_transfer_time(topo: Topology, src: str, dst: str, nbytes: int) -> float:
    """Store-and-forward cost: sum over hops of latency + bits/bandwidth."""
    total = 0.0
    for _, _, link in topo.path(src, dst):
        total += link.latency_s + 8 * nbytes / link.bandwidth_bits_per_s
    return total
