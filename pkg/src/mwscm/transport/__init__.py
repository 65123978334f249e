"""Message substrate: a deterministic simulator and a live UDP/TCP transport."""

from .base import MAX_PAYLOAD, Datagram, Endpoint, Reply, Transport
from .sim import SimConfig, SimNet, sim_create
from .udp import DEFAULT_GROUP, UdpTransport

__all__ = [
    "DEFAULT_GROUP",
    "MAX_PAYLOAD",
    "Datagram",
    "Endpoint",
    "Reply",
    "SimConfig",
    "SimNet",
    "Transport",
    "UdpTransport",
    "sim_create",
]
