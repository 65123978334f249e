"""The Service Pool: registry-less browsing, registration and search.

There is no central registry. Providers multicast ADVERTISE/WITHDRAW lines
and the pool buffers them, folding them into its service list on every
browse tick. Service descriptions are fetched lazily with GETDESC the first
time a search needs them.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, replace
from typing import Optional

from . import wire
from .delegate import ServiceDelegate, create_delegate
from .errors import AlreadyBrowsing, DocumentError, DuplicateName, TransportError
from .model import OperationTaxonomy, ServiceDescription, TypePath, parse_service_description
from .transport.base import Datagram, Endpoint, Transport
from .transport.udp import DEFAULT_GROUP

log = logging.getLogger(__name__)

ALIVE = "alive"
EXPIRED = "expired"


@dataclass(frozen=True)
class PoolEntry:
    service_name: str
    endpoint: Endpoint
    service_type: TypePath
    liveness: str
    last_seen: float
    ttl_ms: Optional[float]  # None for locally registered services
    seq: int
    description: Optional[ServiceDescription] = None
    registered: bool = False

    def fresh_at(self, clock: float) -> bool:
        if self.liveness != ALIVE:
            return False
        return self.ttl_ms is None or self.last_seen + self.ttl_ms >= clock


class BrowseHandle:
    def __init__(self, pool: "ServicePool", interval_ms: float) -> None:
        self.pool = pool
        self.interval_ms = interval_ms
        self._timer = None
        self.active = True

    def stop(self) -> None:
        self.pool.browse_stop()


class ServicePool:
    """Runtime service list plus description memo.

    With ``memoize_descriptions=False`` every search re-fetches the
    description of every candidate provider, which is the uncached cost the
    service cache is meant to avoid. Registered descriptions are always kept.
    """

    def __init__(
        self,
        taxonomy: OperationTaxonomy,
        net: Transport,
        endpoint: Endpoint,
        *,
        group: Endpoint = DEFAULT_GROUP,
        memoize_descriptions: bool = True,
    ) -> None:
        self.taxonomy = taxonomy
        self.net = net
        self.endpoint = endpoint
        self.group = group
        self.memoize_descriptions = memoize_descriptions
        self.fetch_count = 0
        self._entries: dict[str, PoolEntry] = {}
        self._inbox: list[tuple[wire.Announcement, float]] = []
        self._lock = threading.RLock()
        self._browse: Optional[BrowseHandle] = None
        self._bound = False

    # -- state ---------------------------------------------------------------

    @property
    def entries(self) -> dict[str, PoolEntry]:
        with self._lock:
            return dict(self._entries)

    def _alive(self) -> list[PoolEntry]:
        clock = self.net.now()
        with self._lock:
            return sorted(
                (e for e in self._entries.values() if e.fresh_at(clock)),
                key=lambda e: e.service_name,
            )

    def expire(self, service_name: str) -> None:
        """Mark an entry expired, e.g. after a failed fetch or invocation."""
        with self._lock:
            entry = self._entries.get(service_name)
            if entry is not None and entry.liveness == ALIVE:
                self._entries[service_name] = replace(entry, liveness=EXPIRED)

    # -- browsing ------------------------------------------------------------

    def _ensure_bound(self) -> None:
        if not self._bound:
            self.net.bind(self.endpoint, on_datagram=self._on_datagram)
            self._bound = True

    def browse_start(self, interval_ms: float = 100.0) -> BrowseHandle:
        if interval_ms <= 0:
            raise ValueError("browse interval must be > 0")
        with self._lock:
            if self._browse is not None:
                raise AlreadyBrowsing(str(self.endpoint))
            self._ensure_bound()
            self.net.join(self.group, self.endpoint)
            handle = BrowseHandle(self, interval_ms)
            self._browse = handle
        self._schedule_tick(handle)
        return handle

    def browse_stop(self) -> None:
        with self._lock:
            handle, self._browse = self._browse, None
        if handle is None:
            return
        handle.active = False
        if handle._timer is not None:
            handle._timer.cancel()
        self.net.leave(self.group, self.endpoint)

    @property
    def browsing(self) -> bool:
        return self._browse is not None

    def _schedule_tick(self, handle: BrowseHandle) -> None:
        def fire() -> None:
            if not handle.active:
                return
            self.tick()
            self._schedule_tick(handle)

        handle._timer = self.net.call_later(handle.interval_ms, fire, daemon=True)

    def _on_datagram(self, datagram: Datagram) -> None:
        try:
            msg = wire.decode_announcement(datagram.payload)
        except wire.WireError as exc:
            log.debug("ignoring datagram from %s: %s", datagram.source, exc)
            return
        with self._lock:
            self._inbox.append((msg, datagram.timestamp))

    def tick(self) -> None:
        """Fold buffered announcements into the list, then expire stale entries."""
        with self._lock:
            inbox, self._inbox = self._inbox, []
            for msg, seen_at in inbox:
                self._apply(msg, seen_at)
            clock = self.net.now()
            for name, entry in list(self._entries.items()):
                if entry.liveness == ALIVE and not entry.fresh_at(clock):
                    self._entries[name] = replace(entry, liveness=EXPIRED)

    def _apply(self, msg: wire.Announcement, seen_at: float) -> None:
        current = self._entries.get(msg.service_name)
        if isinstance(msg, wire.Withdrawal):
            # the network is authoritative, including over local registrations
            if current is not None and (current.registered or msg.seq >= current.seq):
                del self._entries[msg.service_name]
            return
        if current is not None and not current.registered and msg.seq <= current.seq:
            return
        if current is not None and current.registered and current.liveness == ALIVE:
            return
        description = None
        if current is not None and current.endpoint == msg.endpoint and self.memoize_descriptions:
            description = current.description
        self._entries[msg.service_name] = PoolEntry(
            msg.service_name,
            msg.endpoint,
            msg.service_type,
            ALIVE,
            seen_at,
            msg.ttl_s * 1000.0,
            msg.seq,
            description,
        )

    # -- registration --------------------------------------------------------

    def register_service(self, desc: ServiceDescription) -> None:
        """Add a service directly, with its description already known."""
        with self._lock:
            current = self._entries.get(desc.service_name)
            if current is not None and current.fresh_at(self.net.now()):
                raise DuplicateName(desc.service_name)
            self._entries[desc.service_name] = PoolEntry(
                desc.service_name,
                desc.endpoint_ref,
                desc.service_type,
                ALIVE,
                self.net.now(),
                None,
                current.seq if current else 0,
                desc,
                registered=True,
            )

    # -- search --------------------------------------------------------------

    def find_by_service_type(self, t: TypePath) -> list[str]:
        self.taxonomy.resolve(t)
        return [
            e.service_name
            for e in self._alive()
            if self.taxonomy.contains(e.service_type) and t.is_prefix_of(e.service_type)
        ]

    def find_by_operation_type(self, t: TypePath) -> list[ServiceDelegate]:
        """One fresh delegate per (alive provider, operation of a matching type)."""
        self.taxonomy.resolve(t)
        delegates = []
        for entry in self._alive():
            desc = self._description(entry)
            if desc is None:
                continue
            for op in desc.operations:
                if self.taxonomy.contains(op.op_type) and t.is_prefix_of(op.op_type):
                    delegates.append(create_delegate(desc, op.name))
        return delegates

    def _description(self, entry: PoolEntry) -> Optional[ServiceDescription]:
        if entry.description is not None and (entry.registered or self.memoize_descriptions):
            return entry.description
        self._ensure_bound()
        self.fetch_count += 1
        try:
            raw = self.net.request(self.endpoint, entry.endpoint, wire.GETDESC)
            document = wire.decode_description_reply(raw)
        except (TransportError, wire.WireError) as exc:
            log.info("description fetch from %s failed: %s", entry.service_name, exc)
            self.expire(entry.service_name)
            return None
        if document is None:
            self.expire(entry.service_name)
            return None
        try:
            desc = parse_service_description(document, self.taxonomy)
        except DocumentError as exc:
            log.warning("unusable description from %s: %s", entry.service_name, exc)
            self.expire(entry.service_name)
            return None
        # the description is authoritative for what the provider offers; the
        # endpoint we reached it on is authoritative for where it lives
        desc = replace(desc, endpoint=str(entry.endpoint))
        with self._lock:
            current = self._entries.get(entry.service_name)
            if self.memoize_descriptions and current is not None and current.seq == entry.seq:
                self._entries[entry.service_name] = replace(current, description=desc)
        return desc


def browse_start(pool: ServicePool, interval_ms: float = 100.0) -> BrowseHandle:
    return pool.browse_start(interval_ms)


def register_service(pool: ServicePool, desc: ServiceDescription) -> None:
    pool.register_service(desc)


def find_by_service_type(pool: ServicePool, t: TypePath) -> list[str]:
    return pool.find_by_service_type(t)


def find_by_operation_type(pool: ServicePool, t: TypePath) -> list[ServiceDelegate]:
    return pool.find_by_operation_type(t)
