from .base import Endpoint, Transport
from .sim import Delivery, SimConnection, SimLinkConfig, SimNetwork, SimNodeContext, point_to_point
from .sockets import SocketTransport, StreamConnection, connect, listen

__all__ = [
    "Delivery",
    "Endpoint",
    "SimConnection",
    "SimLinkConfig",
    "SimNetwork",
    "SimNodeContext",
    "SocketTransport",
    "StreamConnection",
    "Transport",
    "connect",
    "listen",
    "point_to_point",
]
