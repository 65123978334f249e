"""Task Manager and Service Cache.

`Mediator.handle_request` walks a task organization document one task at a
time. For each task it consults the service cache, falls back to the
service pool on a miss, picks the best delegate and invokes it. Every step
is appended to a `RequestTrace` numbered after the request-handling
sequence (1-20); the gateway in `broker` contributes steps 1-3 and 18-20.
"""

from __future__ import annotations

import csv
import io
import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional

from .delegate import ServiceDelegate
from .discovery import ServicePool
from .errors import (
    ArgumentMismatch,
    DocumentError,
    InvocationFault,
    NoProvider,
    TaskFault,
    TransportError,
    UnknownRequestType,
)
from .model import (
    LiteralBinding,
    NormalizedRequest,
    NormalizedResponse,
    OperationTaxonomy,
    RequestRef,
    Scalar,
    SlotRef,
    Task,
    TaskOrganizationDocument,
    TaskRecord,
    TypePath,
    Value,
    coerce_scalar,
    parse_task_document,
)
from .transport.base import Endpoint, Transport

log = logging.getLogger(__name__)

DEFAULT_CACHE_TTL_MS = 30_000.0

STEP_LABELS = {
    1: "request submitted to client application",
    2: "client application passes request to broker",
    3: "broker normalizes request",
    4: "normalized request passed to task manager",
    5: "task manager matches task organization document",
    6: "task manager checks service cache",
    7: "service list taken from cache",
    8: "task manager queries service pool",
    9: "service pool returns delegates",
    10: "task manager updates service cache",
    11: "task manager selects best provider",
    12: "task manager sends request to delegate",
    13: "delegate passes request to provider",
    14: "provider returns response to delegate",
    15: "delegate passes response to task manager",
    16: "task manager finalizes result",
    17: "task manager returns result to broker",
    18: "broker formats result for client",
    19: "broker returns result to client application",
    20: "client application sends final response",
}


# --------------------------------------------------------------------------
# trace


@dataclass(frozen=True)
class TraceStep:
    step: int
    label: str
    clock_ms: float
    task_id: Optional[str] = None


@dataclass
class RequestTrace:
    steps: list[TraceStep] = field(default_factory=list)

    def add(self, step: int, clock_ms: float, task_id: Optional[str] = None, note: str = "") -> None:
        label = STEP_LABELS[step] + (f" ({note})" if note else "")
        self.steps.append(TraceStep(step, label, clock_ms, task_id))

    def numbers(self) -> list[int]:
        return [s.step for s in self.steps]

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        if header:
            writer.writerow(["step", "label", "clock_ms", "task_id"])
        for s in self.steps:
            writer.writerow([s.step, s.label, f"{s.clock_ms:.3f}", s.task_id or ""])
        return buf.getvalue()


def expected_step_sequence(cache_hits: Iterable[bool]) -> list[int]:
    """Step numbers of a successful, failure-free request, given each task's cache outcome."""
    seq = [1, 2, 3, 4, 5]
    for hit in cache_hits:
        seq += [6, 7] if hit else [6, 8, 9, 10]
        seq += [11, 12, 13, 14, 15]
    return seq + [16, 17, 18, 19, 20]


# --------------------------------------------------------------------------
# service cache


@dataclass
class _CacheEntry:
    delegates: list[ServiceDelegate]
    created_at: float
    ttl_ms: float


class ServiceCache:
    """Operation-type keyed delegate lists with TTL.

    Keys are exact type paths; subtype matching happens only when the pool
    is queried. An empty list is cached as a negative entry with a quarter
    of the normal TTL.
    """

    def __init__(self, ttl_ms: float = DEFAULT_CACHE_TTL_MS, taxonomy: Optional[OperationTaxonomy] = None) -> None:
        self.ttl_ms = ttl_ms
        self.taxonomy = taxonomy
        self._entries: dict[TypePath, _CacheEntry] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, t: TypePath) -> bool:
        return t in self._entries

    def lookup(self, t: TypePath, clock: float) -> Optional[list[ServiceDelegate]]:
        with self._lock:
            entry = self._entries.get(t)
            if entry is None:
                return None
            if clock - entry.created_at >= entry.ttl_ms:
                del self._entries[t]
                return None
            return list(entry.delegates)

    def update(self, t: TypePath, delegates: list[ServiceDelegate], clock: float) -> None:
        if self.taxonomy is not None:
            for d in delegates:
                if not t.is_prefix_of(d.operation.op_type):
                    raise ValueError(f"{d.service_name}.{d.operation.name} does not match {t}")
        ttl = self.ttl_ms if delegates else self.ttl_ms / 4
        with self._lock:
            self._entries[t] = _CacheEntry(list(delegates), clock, ttl)

    def evict_provider(self, service_name: str) -> int:
        """Drop a provider's delegates everywhere; returns how many entries held it."""
        evicted = 0
        with self._lock:
            for key in list(self._entries):
                entry = self._entries[key]
                kept = [d for d in entry.delegates if d.service_name != service_name]
                if len(kept) != len(entry.delegates):
                    evicted += 1
                    if kept:
                        entry.delegates = kept
                    else:
                        del self._entries[key]
        return evicted

    def clear(self) -> None:
        with self._lock:
            self._entries.clear()


def cache_lookup(cache: ServiceCache, t: TypePath, clock: float) -> Optional[list[ServiceDelegate]]:
    return cache.lookup(t, clock)


def cache_update(cache: ServiceCache, t: TypePath, delegates: list[ServiceDelegate], clock: float) -> None:
    cache.update(t, delegates, clock)


def evict_provider(cache: ServiceCache, service_name: str) -> int:
    return cache.evict_provider(service_name)


def select_best(delegates: list[ServiceDelegate]) -> ServiceDelegate:
    """Lowest RTT among reachable delegates; untried providers (RTT 0) first."""
    reachable = [d for d in delegates if d.status.reachable]
    if not reachable:
        raise NoProvider("no reachable delegate")
    return min(reachable, key=lambda d: (d.status.rtt_ewma_ms, d.service_name, d.operation.name))


# --------------------------------------------------------------------------
# plan catalog


class PlanCatalog(dict):
    """request_type -> TaskOrganizationDocument."""

    def add(self, doc: TaskOrganizationDocument) -> None:
        if doc.request_type in self:
            raise ValueError(f"duplicate plan for request type {doc.request_type!r}")
        self[doc.request_type] = doc

    @classmethod
    def from_documents(cls, docs: Iterable[TaskOrganizationDocument]) -> "PlanCatalog":
        catalog = cls()
        for doc in docs:
            catalog.add(doc)
        return catalog

    @classmethod
    def load_directory(cls, directory: Path, taxonomy: OperationTaxonomy) -> "PlanCatalog":
        catalog = cls()
        for path in sorted(Path(directory).glob("*.xml")):
            try:
                catalog.add(parse_task_document(path.read_bytes(), taxonomy))
            except DocumentError as exc:
                raise type(exc)(f"{path}: {exc}") from exc
        return catalog


# --------------------------------------------------------------------------
# task manager


CachePolicy = Callable[[Task], bool]


@dataclass
class MediatorStats:
    evictions: int = 0
    rediscoveries: int = 0
    invocations: int = 0


class Mediator:
    def __init__(
        self,
        catalog: PlanCatalog,
        pool: ServicePool,
        cache: ServiceCache,
        net: Transport,
        endpoint: Endpoint,
        *,
        cache_policy: Optional[CachePolicy] = None,
    ) -> None:
        self.catalog = catalog
        self.pool = pool
        self.cache = cache
        self.net = net
        self.endpoint = endpoint
        self.cache_policy = cache_policy
        self.stats = MediatorStats()
        if not getattr(net, "is_bound", lambda e: True)(endpoint):
            net.bind(endpoint)

    def handle_request(
        self, req: NormalizedRequest, trace: Optional[RequestTrace] = None
    ) -> tuple[NormalizedResponse, RequestTrace]:
        """Run the plan for `req`; raises UnknownRequestType, NoProvider or TaskFault."""
        trace = trace if trace is not None else RequestTrace()
        now = self.net.now
        trace.add(4, now())
        plan = self.catalog.get(req.request_type)
        if plan is None:
            raise UnknownRequestType(req.request_type)
        trace.add(5, now(), note=f"{plan.request_type}: {len(plan.tasks)} tasks")

        slots: dict[str, Value] = {}
        provenance: list[TaskRecord] = []
        for task in plan.tasks:
            started = now()
            served_by, hit, value = self._run_task(task, req, slots, trace)
            slots[task.output_slot] = value
            provenance.append(TaskRecord(task.task_id, served_by, now() - started, hit))

        trace.add(16, now())
        response = NormalizedResponse.ok(slots, provenance)
        trace.add(17, now())
        return response, trace

    # -- one task --------------------------------------------------------------

    def _run_task(
        self, task: Task, req: NormalizedRequest, slots: dict[str, Value], trace: RequestTrace
    ) -> tuple[str, bool, Value]:
        now = self.net.now
        tid = task.task_id
        use_cache = self.cache_policy is None or self.cache_policy(task)

        trace.add(6, now(), tid, "" if use_cache else "bypassed")
        cached = self.cache.lookup(task.op_type, now()) if use_cache else None
        if cached is not None:
            trace.add(7, now(), tid, f"{len(cached)} delegates")
            delegates, hit = cached, True
        else:
            delegates, hit = self._discover(task, trace), False

        retried = False
        while True:
            candidates = [d for d in delegates if task.provider is None or d.service_name == task.provider]
            try:
                chosen = select_best(candidates)
            except NoProvider:
                trace.add(11, now(), tid, "no reachable provider")
                if retried:
                    raise NoProvider(f"task {tid}: no provider for {task.op_type}") from None
                retried = True
                for d in candidates:
                    self._evict(d.service_name)
                delegates = self._discover(task, trace, retry=True)
                continue
            trace.add(11, now(), tid, chosen.service_name)
            args = self._bind_args(task, chosen, req, slots)
            trace.add(12, now(), tid)
            trace.add(13, now(), tid)
            self.stats.invocations += 1
            try:
                value = chosen.invoke(args, self.net, self.endpoint)
            except TransportError as exc:
                log.info("task %s: %s unreachable (%s)", tid, chosen.service_name, exc)
                self._evict(chosen.service_name)
                if retried:
                    raise NoProvider(f"task {tid}: provider failed after re-discovery") from exc
                retried = True
                delegates = self._discover(task, trace, retry=True)
                continue
            except InvocationFault as exc:
                raise TaskFault(tid, exc.fault_code) from exc
            trace.add(14, now(), tid)
            trace.add(15, now(), tid)
            return chosen.service_name, hit, value

    def _discover(self, task: Task, trace: RequestTrace, retry: bool = False) -> list[ServiceDelegate]:
        now = self.net.now
        note = "re-discovery" if retry else ""
        if retry:
            self.stats.rediscoveries += 1
        trace.add(8, now(), task.task_id, note)
        delegates = self.pool.find_by_operation_type(task.op_type)
        trace.add(9, now(), task.task_id, f"{len(delegates)} delegates")
        self.cache.update(task.op_type, delegates, now())
        trace.add(10, now(), task.task_id, note)
        return delegates

    def _evict(self, service_name: str) -> None:
        self.stats.evictions += 1
        self.cache.evict_provider(service_name)
        self.pool.expire(service_name)

    @staticmethod
    def _bind_args(
        task: Task, delegate: ServiceDelegate, req: NormalizedRequest, slots: dict[str, Value]
    ) -> dict[str, Scalar]:
        kinds = dict(delegate.operation.inputs)
        args: dict[str, Scalar] = {}
        for param, binding in task.inputs:
            if isinstance(binding, LiteralBinding):
                raw: object = binding.value
            elif isinstance(binding, RequestRef):
                if binding.field not in req.params:
                    raise ArgumentMismatch(f"task {task.task_id}: request has no field {binding.field!r}")
                raw = req.params[binding.field]
            else:
                raw = _read_slot(task, binding, slots)
            if param not in kinds:
                raise ArgumentMismatch(
                    f"task {task.task_id}: {delegate.service_name}.{delegate.operation.name} takes no {param!r}"
                )
            if isinstance(raw, dict):
                raise ArgumentMismatch(f"task {task.task_id}: {param!r} is bound to a whole record")
            args[param] = coerce_scalar(raw, kinds[param])  # type: ignore[arg-type]
        return args


def _read_slot(task: Task, ref: SlotRef, slots: dict[str, Value]) -> object:
    value = slots[ref.slot]
    if ref.field is None:
        return value
    if not isinstance(value, dict) or ref.field not in value:
        raise ArgumentMismatch(f"task {task.task_id}: slot {ref.slot!r} has no field {ref.field!r}")
    return value[ref.field]


def handle_request(
    req: NormalizedRequest,
    catalog: PlanCatalog,
    pool: ServicePool,
    cache: ServiceCache,
    net: Transport,
    endpoint: Endpoint,
) -> tuple[NormalizedResponse, RequestTrace]:
    return Mediator(catalog, pool, cache, net, endpoint).handle_request(req)
