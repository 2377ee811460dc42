import itertools

import pytest
from hypothesis import given, strategies as st

from vifusion.errors import ConfigurationError, InvalidInputError, UnreachableError
from vifusion.topology import (
    Aggregator,
    Link,
    Node,
    Topology,
    build_tree_topology,
    default_topology,
    estimate_transfer_time,
    partition_groups,
)

from oracles import path_time


def test_two_by_two_grouping():
    topo = build_tree_topology(2, 2)
    g = partition_groups(topo, ["n0", "n1", "n2", "n3"])
    assert g.groups == {"r0": ("n0", "n1"), "r1": ("n2", "n3")}
    assert g.leaders == {"r0": "a0", "r1": "a1"}
    assert g.core_leader == "c0"


def test_single_rack_has_no_core_stage():
    g = partition_groups(build_tree_topology(1, 4), ["n0", "n1", "n2", "n3"])
    assert g.groups == {"r0": ("n0", "n1", "n2", "n3")}
    assert g.core_leader is None


def test_missing_rack_aggregator():
    topo = Topology(
        (Node("n0", "r0"), Node("n1", "r1")),
        (Link("n0", "t0", 1e9, 0), Link("n1", "t0", 1e9, 0), Link("a0", "t0", 1e9, 0), Link("c0", "t0", 1e9, 0)),
        (Aggregator("a0", "rack", "r0"), Aggregator("c0", "core")),
    )
    with pytest.raises(ConfigurationError):
        partition_groups(topo, ["n0", "n1"])
    assert partition_groups(topo, ["n0"]).leaders == {"r0": "a0"}


def test_bad_worker_lists():
    topo = build_tree_topology(2, 2)
    with pytest.raises(InvalidInputError):
        partition_groups(topo, [])
    with pytest.raises(InvalidInputError):
        partition_groups(topo, ["n9"])
    with pytest.raises(InvalidInputError):
        partition_groups(topo, ["n0", "n0"])


def test_structural_validation():
    with pytest.raises(ConfigurationError):  # cycle
        Topology((Node("a", "r"), Node("b", "r")), (Link("a", "b", 1, 0), Link("b", "a", 1, 0)))
    with pytest.raises(ConfigurationError):  # disconnected
        Topology((Node("a", "r"), Node("b", "r"), Node("c", "r"), Node("d", "r")), (Link("a", "b", 1, 0), Link("c", "d", 1, 0), Link("a", "x", 1, 0)))
    with pytest.raises(ConfigurationError):  # two rack aggregators
        Topology((Node("a", "r"),), (Link("a", "x", 1, 0), Link("x", "g1", 1, 0), Link("x", "g2", 1, 0)), (Aggregator("g1", "rack", "r"), Aggregator("g2", "rack", "r")))


def test_transfer_time_same_rack():
    # 1 MB over two 10 Gbps / 10 us hops, store and forward: each hop pays 0.8 ms + 10 us
    topo = build_tree_topology(1, 2, intra_bps=10e9, intra_latency_s=10e-6)
    t = estimate_transfer_time(topo, "n0", "n1", 10**6)
    assert t == pytest.approx(2 * (0.8e-3 + 10e-6), rel=1e-12)


def test_zero_bytes_is_path_latency():
    topo = default_topology(4)
    assert estimate_transfer_time(topo, "n0", "n3", 0) == pytest.approx(2 * 1e-6 + 2 * 5e-6)


def test_unknown_endpoint_unreachable():
    with pytest.raises(UnreachableError):
        estimate_transfer_time(default_topology(2), "n0", "nowhere", 10)


@given(st.floats(1e8, 1e11), st.floats(0.01, 0.99), st.floats(0, 1e-4), st.floats(0, 1e-4), st.integers(1, 10**8))
def test_inter_rack_slower(rack_bw, frac, lat_i, lat_x, nbytes):
    topo = build_tree_topology(2, 2, intra_bps=rack_bw, inter_bps=rack_bw * frac, intra_latency_s=lat_i, inter_latency_s=lat_x)
    intra = estimate_transfer_time(topo, "n0", "n1", nbytes)
    inter = estimate_transfer_time(topo, "n0", "n2", nbytes)
    assert inter > intra
    assert inter == pytest.approx(path_time([(rack_bw, lat_i), (rack_bw * frac, lat_x), (rack_bw * frac, lat_x), (rack_bw, lat_i)], nbytes))


@given(st.lists(st.integers(1, 4), min_size=1, max_size=5), st.randoms(use_true_random=False))
def test_groups_partition_workers(counts, rnd):
    topo = build_tree_topology(len(counts), counts)
    workers = topo.workers()
    chosen = [w for w in workers if rnd.random() < 0.7] or workers[:1]
    rnd.shuffle(chosen)
    g = partition_groups(topo, chosen)
    rack = {n.node_id: n.rack_id for n in topo.nodes}
    expected = {}
    for w in chosen:
        expected.setdefault(rack[w], []).append(w)
    assert {r: sorted(ws) for r, ws in g.groups.items()} == {r: sorted(ws) for r, ws in expected.items()}
    assert sorted(itertools.chain(*g.groups.values())) == sorted(chosen)
    assert all(g.leaders[r] == topo.rack_aggregator[r] for r in g.groups)
    assert (g.core_leader is not None) == (len(g.groups) > 1)
    other = list(chosen)
    rnd.shuffle(other)
    g2 = partition_groups(topo, other)
    assert {r: set(v) for r, v in g2.groups.items()} == {r: set(v) for r, v in g.groups.items()}


def test_json_round_trip(tmp_path):
    topo = build_tree_topology(3, [1, 2, 3], intra_bps=40e9)
    path = tmp_path / "t.json"
    topo.save(path)
    back = Topology.load(path)
    assert back.to_dict() == topo.to_dict()
    assert set(back.to_dict()) == {"nodes", "links", "aggregators"}
    assert back.hosts == topo.hosts


def test_default_topology_shapes():
    assert default_topology(1).racks == ("r0",)
    t = default_topology(8)
    assert [len(partition_groups(t, t.workers()).groups[r]) for r in t.racks] == [4, 4]
    assert t.hosts[:8] == tuple(f"n{i}" for i in range(8))
    assert set(t.hosts[8:]) == {"a0", "a1", "c0"}
