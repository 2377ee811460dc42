"""Backend-neutral transport types."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol


@dataclass(frozen=True)
class Endpoint:
    node_id: str
    address: str  # "host:port" or "sim://<id>"
    backend: str  # "REAL" | "SIMULATED"


class Transport(Protocol):
    """Point-to-point frame transport as seen by one node."""

    node: str

    def send(self, dst: str, frame) -> None: ...

    def recv(self, timeout: float | None = None): ...

    def close(self) -> None: ...
