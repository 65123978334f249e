"""Transport-neutral types: endpoints, datagrams, replies and the transport contract."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Optional, Protocol, Union

MAX_PAYLOAD = 8 * 1024
SCHEMES = ("sim", "udp", "tcp")

_ENDPOINT_RE = re.compile(r"^(?P<scheme>[a-z]+)://(?P<host>[A-Za-z0-9._-]+):(?P<port>[0-9]{1,5})$")


@dataclass(frozen=True, order=True)
class Endpoint:
    scheme: str
    host: str
    port: int

    def __post_init__(self) -> None:
        if self.scheme not in SCHEMES:
            raise ValueError(f"unsupported endpoint scheme {self.scheme!r}")
        if not self.host:
            raise ValueError("endpoint host is empty")
        if not 1 <= self.port <= 65535:
            raise ValueError(f"endpoint port out of range: {self.port}")

    @classmethod
    def parse(cls, text: str) -> "Endpoint":
        m = _ENDPOINT_RE.match(text)
        if m is None:
            raise ValueError(f"not an endpoint URI: {text!r}")
        return cls(m["scheme"], m["host"], int(m["port"]))

    def __str__(self) -> str:
        return f"{self.scheme}://{self.host}:{self.port}"


@dataclass(frozen=True)
class Datagram:
    payload: bytes
    source: Endpoint
    timestamp: float


@dataclass(frozen=True)
class Reply:
    """A unicast response plus extra service time spent before sending it."""

    payload: bytes
    delay_ms: float = 0.0


DatagramHandler = Callable[[Datagram], None]
# A request handler may return raw bytes, a Reply, or None for "no answer".
RequestHandler = Callable[[bytes, Endpoint], Union[bytes, Reply, None]]


class TimerHandle(Protocol):
    def cancel(self) -> None: ...


class Transport(Protocol):
    """What discovery, delegates and providers need from the network.

    `SimNet` and `UdpTransport` both satisfy it. Times are milliseconds;
    virtual on the simulator, monotonic wall-clock on UDP.
    """

    fetch_latency_ms: float

    def now(self) -> float: ...

    def bind(
        self,
        endpoint: Endpoint,
        *,
        on_datagram: Optional[DatagramHandler] = None,
        on_request: Optional[RequestHandler] = None,
    ) -> None: ...

    def unbind(self, endpoint: Endpoint) -> None: ...

    def join(self, group: Endpoint, member: Endpoint) -> None: ...

    def leave(self, group: Endpoint, member: Endpoint) -> None: ...

    def send(self, source: Endpoint, to: Endpoint, payload: bytes) -> None: ...

    def request(
        self, source: Endpoint, to: Endpoint, payload: bytes, timeout_ms: float = ...
    ) -> bytes: ...

    def call_later(
        self, delay_ms: float, callback: Callable[[], None], *, daemon: bool = False
    ) -> TimerHandle: ...
