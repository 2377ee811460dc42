import socket
import threading

import numpy as np
import pytest

from vifusion.collective import ALL_KINDS, AlgorithmKind, AllReduceFrame, MsgType
from vifusion.collective.api import allreduce, serve_aggregator
from vifusion.errors import FramingError, TransportError, TransportTimeout
from vifusion.tensor import Tensor
from vifusion.topology import default_topology, partition_groups
from vifusion.transport.sockets import SocketTransport, connect

from oracles import brute_sum


def free_ports(n):
    socks = [socket.socket() for _ in range(n)]
    for s in socks:
        s.bind(("127.0.0.1", 0))
    ports = [s.getsockname()[1] for s in socks]
    for s in socks:
        s.close()
    return ports


def address_map(names):
    return {h: f"127.0.0.1:{p}" for h, p in zip(names, free_ports(len(names)))}


def frame(sender, values=(), job=1, chunk=0):
    return AllReduceFrame(MsgType.PUSH_PARTIAL, job, 0, chunk, sender, np.asarray(values, dtype=np.float32))


@pytest.fixture
def pair():
    addrs = address_map(["a", "b"])
    a, b = SocketTransport("a", addrs), SocketTransport("b", addrs)
    yield a, b
    a.close()
    b.close()


def test_frames_arrive_in_order(pair):
    a, b = pair
    sent = [frame(0, np.arange(k), chunk=k) for k in range(200)]
    for f in sent:
        a.send("b", f)
    got = [b.recv(5) for _ in sent]
    assert got == sent


def test_receive_timeout(pair):
    _, b = pair
    with pytest.raises(TransportTimeout):
        b.recv(0.05)


def test_unknown_peer(pair):
    a, _ = pair
    with pytest.raises(TransportError):
        a.send("nobody", frame(0))


def test_bad_magic_closes_connection(pair):
    _, b = pair
    conn = connect(b.address, 5)
    conn.sock.sendall(b"XXXX" + bytes(26))
    with pytest.raises(FramingError):
        b.recv(5)
    conn.sock.settimeout(5)
    assert conn.sock.recv(1) == b""
    conn.close()


def test_connect_refused_after_timeout():
    (port,) = free_ports(1)
    with pytest.raises(TransportError):
        connect(f"127.0.0.1:{port}", timeout=0.2)


@pytest.mark.parametrize("workers", [1, 3, 4])
def test_allreduce_over_sockets(workers):
    topo = default_topology(workers)
    asg = partition_groups(topo, topo.workers())
    addrs = address_map(topo.hosts)
    stop = threading.Event()
    aggs = [SocketTransport(a, addrs) for a in list(asg.leaders.values()) + ([asg.core_leader] if asg.core_leader else [])]
    servers = [threading.Thread(target=serve_aggregator, args=(t, asg, stop), daemon=True) for t in aggs]
    for s in servers:
        s.start()
    rng = np.random.default_rng(workers)
    inputs = {w: rng.integers(-50, 50, 777).astype(np.float32) for w in topo.workers()}
    expected = np.array(brute_sum(list(inputs.values())), dtype=np.float32)
    results, errors = {}, []

    def run(w):
        t = SocketTransport(w, addrs)
        try:
            for job, kind in enumerate(ALL_KINDS, start=1):
                results[(w, kind.label)] = allreduce(kind, Tensor.from_values(inputs[w]), asg, t, job_id=job, timeout=20).data
        except Exception as exc:  # surfaced below
            errors.append(exc)
        finally:
            # let peers drain the last frames before tearing down listeners
            barrier.wait(20)
            t.close()

    barrier = threading.Barrier(workers)
    threads = [threading.Thread(target=run, args=(w,)) for w in topo.workers()]
    for th in threads:
        th.start()
    for th in threads:
        th.join(60)
    stop.set()
    for s in servers:
        s.join(5)
    for t in aggs:
        t.close()
    assert not errors, errors
    for kind in ALL_KINDS:
        for w in topo.workers():
            assert results[(w, kind.label)].tobytes() == expected.tobytes(), kind.label


class _QueueTransport:
    def __init__(self, node, frames):
        self.node = node
        self.frames = list(frames)

    def send(self, dst, f):
        pass

    def recv(self, timeout=None):
        if not self.frames:
            raise TransportTimeout("empty")
        return self.frames.pop(0)


def test_early_frame_for_next_job_is_kept_between_calls():
    topo = default_topology(2)
    asg = partition_groups(topo, topo.workers())
    ids = topo.host_index
    bcast = lambda job, v: AllReduceFrame(MsgType.BROADCAST, job, 0, 0, ids["a0"], np.array([v], np.float32))
    t = _QueueTransport("n0", [bcast(2, 7.0), bcast(1, 3.0)])

    one = allreduce(AlgorithmKind.hierarchical(), Tensor.from_values([1.0]), asg, t, job_id=1, timeout=1)
    two = allreduce(AlgorithmKind.hierarchical(), Tensor.from_values([1.0]), asg, t, job_id=2, timeout=1)
    assert one.data.tolist() == [3.0] and two.data.tolist() == [7.0]
