"""Deterministic discrete-event network with injected latencies.

All times are virtual milliseconds. Events run in (time, scheduling order)
order, so a fixed seed and an identical sequence of calls always produce the
same event log.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import random
from dataclasses import dataclass, field
from typing import Callable, Optional

from ..errors import ConfigError, EndpointInUse, PayloadTooLarge, TransportError, UnknownNode
from .base import MAX_PAYLOAD, Datagram, DatagramHandler, Endpoint, Reply, RequestHandler

log = logging.getLogger(__name__)

DEFAULT_REQUEST_TIMEOUT_MS = 1000.0


@dataclass(frozen=True)
class SimConfig:
    link_latency_ms: float = 5.0
    fetch_latency_ms: float = 50.0
    drop_probability: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.link_latency_ms < 0 or self.fetch_latency_ms < 0:
            raise ConfigError("latencies must be >= 0")
        if not 0.0 <= self.drop_probability < 1.0:
            raise ConfigError(f"drop probability must be in [0, 1), got {self.drop_probability}")


@dataclass(order=True)
class _Event:
    time: float
    seq: int
    callback: Callable[[], None] = field(compare=False)
    daemon: bool = field(compare=False, default=False)
    cancelled: bool = field(compare=False, default=False)


class _Timer:
    def __init__(self, net: "SimNet", event: _Event) -> None:
        self._net = net
        self._event = event

    def cancel(self) -> None:
        self._net._cancel(self._event)


@dataclass
class _Node:
    on_datagram: Optional[DatagramHandler]
    on_request: Optional[RequestHandler]


class SimNet:
    """Single-threaded simulated network. Not safe to drive from several threads."""

    def __init__(self, config: SimConfig | None = None) -> None:
        self.config = config or SimConfig()
        self.clock = 0.0
        self.event_log: list[str] = []
        self._rng = random.Random(self.config.seed)
        self._queue: list[_Event] = []
        self._seq = itertools.count()
        self._pending = 0  # live non-daemon events
        self._nodes: dict[Endpoint, _Node] = {}
        self._groups: dict[Endpoint, list[Endpoint]] = {}

    # -- transport contract -------------------------------------------------

    @property
    def fetch_latency_ms(self) -> float:
        return self.config.fetch_latency_ms

    def now(self) -> float:
        return self.clock

    @property
    def nodes(self) -> list[Endpoint]:
        return sorted(self._nodes)

    def is_bound(self, endpoint: Endpoint) -> bool:
        return endpoint in self._nodes

    def bind(
        self,
        endpoint: Endpoint,
        *,
        on_datagram: Optional[DatagramHandler] = None,
        on_request: Optional[RequestHandler] = None,
    ) -> None:
        if endpoint in self._nodes:
            raise EndpointInUse(str(endpoint))
        self._nodes[endpoint] = _Node(on_datagram, on_request)

    def unbind(self, endpoint: Endpoint) -> None:
        self._nodes.pop(endpoint, None)
        for members in self._groups.values():
            if endpoint in members:
                members.remove(endpoint)

    def join(self, group: Endpoint, member: Endpoint) -> None:
        if member not in self._nodes:
            raise UnknownNode(str(member))
        members = self._groups.setdefault(group, [])
        if member not in members:
            members.append(member)

    def leave(self, group: Endpoint, member: Endpoint) -> None:
        members = self._groups.get(group, [])
        if member in members:
            members.remove(member)

    def send(self, source: Endpoint, to: Endpoint, payload: bytes) -> None:
        """Schedule one datagram per addressee at clock + link latency."""
        self._check_outbound(source, payload)
        if to in self._groups:
            targets = [m for m in self._groups[to] if m != source]
        else:
            targets = [to]
        for target in targets:
            if self._dropped():
                self._log(f"drop {source}->{target} {len(payload)}B")
                continue
            datagram = Datagram(payload, source, self.clock + self.config.link_latency_ms)
            self._schedule(
                self.config.link_latency_ms,
                lambda t=target, d=datagram: self._deliver(t, d),
            )

    def request(
        self,
        source: Endpoint,
        to: Endpoint,
        payload: bytes,
        timeout_ms: float = DEFAULT_REQUEST_TIMEOUT_MS,
    ) -> bytes:
        """Blocking unicast request/response.

        Runs the event loop until the reply, a refusal or the timeout arrives.
        A refusal (nothing bound at `to`) costs one round trip.
        """
        self._check_outbound(source, payload)
        outcome: dict[str, object] = {}
        link = self.config.link_latency_ms

        def finish(key: str, value: object) -> None:
            if not outcome:
                outcome[key] = value

        def serve() -> None:
            node = self._nodes.get(to)
            if node is None or node.on_request is None:
                self._log(f"refused {source}->{to}")
                self._schedule(link, lambda: finish("error", f"connection refused by {to}"))
                return
            self._log(f"serve {source}->{to} {len(payload)}B")
            answer = node.on_request(payload, source)
            if answer is None:
                return
            reply = answer if isinstance(answer, Reply) else Reply(answer)
            if len(reply.payload) > MAX_PAYLOAD:
                raise PayloadTooLarge(f"reply of {len(reply.payload)} bytes")
            if self._dropped():
                self._log(f"drop reply {to}->{source}")
                return
            self._schedule(reply.delay_ms + link, lambda: finish("reply", reply.payload))

        if self._dropped():
            self._log(f"drop request {source}->{to}")
        else:
            self._schedule(link, serve)
        timer = self._schedule(timeout_ms, lambda: finish("error", f"request to {to} timed out"))

        while not outcome:
            if not self._step():
                raise TransportError(f"network idle before reply from {to}")
        self._cancel(timer)
        if "error" in outcome:
            raise TransportError(str(outcome["error"]))
        reply_payload = outcome["reply"]
        assert isinstance(reply_payload, bytes)
        return reply_payload

    def call_later(
        self, delay_ms: float, callback: Callable[[], None], *, daemon: bool = False
    ) -> _Timer:
        if delay_ms < 0:
            raise ValueError("delay must be >= 0")
        return _Timer(self, self._schedule(delay_ms, callback, daemon=daemon))

    # -- driving the loop -----------------------------------------------------

    def run_until_idle(self) -> float:
        """Process events until only daemon timers remain; return the clock."""
        while self._pending and self._step():
            pass
        return self.clock

    def run_until(self, t: float) -> float:
        while self._queue and self._peek_time() <= t:
            self._step()
        self.clock = max(self.clock, t)
        return self.clock

    def run_for(self, ms: float) -> float:
        return self.run_until(self.clock + ms)

    # -- internals -----------------------------------------------------------

    def _check_outbound(self, source: Endpoint, payload: bytes) -> None:
        if source not in self._nodes:
            raise UnknownNode(str(source))
        if not payload:
            raise ValueError("payload must be non-empty")
        if len(payload) > MAX_PAYLOAD:
            raise PayloadTooLarge(f"{len(payload)} bytes exceeds {MAX_PAYLOAD}")

    def _dropped(self) -> bool:
        p = self.config.drop_probability
        return p > 0 and self._rng.random() < p

    def _schedule(self, delay_ms: float, callback: Callable[[], None], *, daemon: bool = False) -> _Event:
        event = _Event(self.clock + delay_ms, next(self._seq), callback, daemon)
        heapq.heappush(self._queue, event)
        if not daemon:
            self._pending += 1
        return event

    def _cancel(self, event: _Event) -> None:
        if not event.cancelled:
            event.cancelled = True
            if not event.daemon:
                self._pending -= 1

    def _peek_time(self) -> float:
        while self._queue and self._queue[0].cancelled:
            heapq.heappop(self._queue)
        return self._queue[0].time if self._queue else float("inf")

    def _step(self) -> bool:
        while self._queue:
            event = heapq.heappop(self._queue)
            if event.cancelled:
                continue
            if not event.daemon:
                self._pending -= 1
            event.cancelled = True
            self.clock = event.time
            event.callback()
            return True
        return False

    def _deliver(self, target: Endpoint, datagram: Datagram) -> None:
        node = self._nodes.get(target)
        if node is None or node.on_datagram is None:
            self._log(f"lost {datagram.source}->{target}")
            return
        self._log(f"deliver {datagram.source}->{target} {len(datagram.payload)}B")
        node.on_datagram(datagram)

    def _log(self, message: str) -> None:
        line = f"{self.clock:.3f} {message}"
        self.event_log.append(line)
        log.debug(line)


def sim_create(config: SimConfig | None = None) -> SimNet:
    return SimNet(config)
