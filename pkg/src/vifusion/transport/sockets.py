"""Real OS-socket backend: length-delimited frames over TCP streams."""

from __future__ import annotations

import logging
import queue
import socket
import threading
import time

from ..collective.frame import HEADER_SIZE, AllReduceFrame, decode_frame, decode_header, encode_frame
from ..errors import FramingError, TransportError, TransportTimeout

log = logging.getLogger(__name__)


def parse_address(address: str) -> tuple[str, int]:
    host, _, port = address.rpartition(":")
    return host or "127.0.0.1", int(port)


class StreamConnection:
    """One reliable, in-order, bidirectional frame stream."""

    def __init__(self, sock: socket.socket, peer: str | None = None):
        self.sock = sock
        self.peer = peer
        self._send_lock = threading.Lock()
        self.closed = False
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def send_frame(self, frame: AllReduceFrame) -> None:
        data = encode_frame(frame)
        with self._send_lock:
            if self.closed:
                raise TransportError(f"connection to {self.peer} is closed")
            try:
                self.sock.sendall(data)
            except OSError as exc:
                self.close()
                raise TransportError(f"send to {self.peer} failed: {exc}") from exc

    def _read_exact(self, n: int) -> bytes:
        chunks = []
        while n:
            try:
                part = self.sock.recv(min(n, 1 << 20))
            except socket.timeout as exc:
                raise TransportTimeout(f"timed out reading from {self.peer}") from exc
            except OSError as exc:
                self.close()
                raise TransportError(f"read from {self.peer} failed: {exc}") from exc
            if not part:
                self.close()
                raise TransportError(f"{self.peer} closed the connection")
            chunks.append(part)
            n -= len(part)
        return b"".join(chunks)

    def recv_frame(self, timeout: float | None = None) -> AllReduceFrame:
        self.sock.settimeout(timeout)
        header = self._read_exact(HEADER_SIZE)
        try:
            payload_len = decode_header(header)[-1]
        except FramingError:
            self.close()
            raise
        return decode_frame(header + self._read_exact(payload_len))

    def close(self) -> None:
        self.closed = True
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


def connect(address: str, timeout: float = 10.0, peer: str | None = None) -> StreamConnection:
    """Dial ``address``, retrying until the listener is up or ``timeout`` passes."""
    host, port = parse_address(address)
    deadline = time.monotonic() + timeout
    while True:
        try:
            sock = socket.create_connection((host, port), timeout=max(0.1, deadline - time.monotonic()))
            sock.settimeout(None)
            return StreamConnection(sock, peer or address)
        except OSError as exc:
            if time.monotonic() >= deadline:
                raise TransportError(f"cannot connect to {address}: {exc}") from exc
            time.sleep(0.05)


def listen(address: str) -> socket.socket:
    host, port = parse_address(address)
    srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    srv.bind((host, port))
    srv.listen(128)
    return srv


class SocketTransport:
    """Per-node transport: listens on its own address, dials peers lazily.

    Received frames from every inbound connection land in one queue; order
    is preserved per connection. A framing error closes the offending
    connection and is re-raised from the next ``recv``.
    """

    def __init__(self, node: str, addresses: dict[str, str], connect_timeout: float = 10.0):
        self.node = node
        self.addresses = addresses
        self.connect_timeout = connect_timeout
        self._inbox: queue.Queue = queue.Queue()
        self._out: dict[str, StreamConnection] = {}
        self._out_lock = threading.Lock()
        self._server = listen(addresses[node])
        self._closed = threading.Event()
        self._inbound: list[StreamConnection] = []
        self._acceptor = threading.Thread(target=self._accept_loop, name=f"accept-{node}", daemon=True)
        self._acceptor.start()

    @property
    def address(self) -> str:
        return self.addresses[self.node]

    def _accept_loop(self) -> None:
        while not self._closed.is_set():
            try:
                sock, addr = self._server.accept()
            except OSError:
                return
            conn = StreamConnection(sock, f"{addr[0]}:{addr[1]}")
            self._inbound.append(conn)
            threading.Thread(target=self._read_loop, args=(conn,), daemon=True).start()

    def _read_loop(self, conn: StreamConnection) -> None:
        while not self._closed.is_set():
            try:
                frame = conn.recv_frame()
            except FramingError as exc:
                self._inbox.put(exc)
                return
            except (TransportError, TransportTimeout, OSError):
                return
            self._inbox.put(frame)

    def _conn(self, dst: str) -> StreamConnection:
        with self._out_lock:
            conn = self._out.get(dst)
            if conn is None or conn.closed:
                if dst not in self.addresses:
                    raise TransportError(f"unknown endpoint {dst}")
                conn = connect(self.addresses[dst], self.connect_timeout, peer=dst)
                self._out[dst] = conn
            return conn

    def send(self, dst: str, frame: AllReduceFrame) -> None:
        self._conn(dst).send_frame(frame)

    def recv(self, timeout: float | None = None) -> AllReduceFrame:
        try:
            item = self._inbox.get(timeout=timeout)
        except queue.Empty:
            raise TransportTimeout(f"{self.node}: no frame within {timeout}s") from None
        if isinstance(item, Exception):
            raise item
        return item

    def close(self) -> None:
        self._closed.set()
        try:
            self._server.close()
        except OSError:
            pass
        for conn in list(self._out.values()) + self._inbound:
            conn.close()
