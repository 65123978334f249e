"""Reference mobile web service provider.

A provider serves its description over GETDESC, answers CALL invocations
from a per-operation handler table and advertises itself on the multicast
group every ttl/2. Three handler kinds exist: a fixed record (fixture), a
DVD vendor catalog that scores buyer preferences, and a scripted fault.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Union

from . import wire
from .errors import ArgumentMismatch, ConfigError, NotRunning
from .model import (
    RECORD,
    OperationTaxonomy,
    Scalar,
    ServiceDescription,
    coerce_scalar,
    format_scalar,
    infer_scalar,
    parse_service_description,
    serialize_service_description,
)
from .transport.base import Endpoint, Reply, Transport
from .transport.udp import DEFAULT_GROUP

log = logging.getLogger(__name__)

DEFAULT_TTL_S = 10
_CODE_RE = re.compile(r"^[A-Za-z][A-Za-z0-9_-]*$")


# --------------------------------------------------------------------------
# handler specs


@dataclass(frozen=True)
class Fixture:
    record: Mapping[str, Scalar]


@dataclass(frozen=True)
class VendorCatalog:
    items: tuple[str, ...] = ()
    genres: frozenset[str] = frozenset()
    trading_times: frozenset[str] = frozenset()


@dataclass(frozen=True)
class ScriptedFault:
    code: str


HandlerSpec = Union[Fixture, VendorCatalog, ScriptedFault]


def _split_set(text: str) -> frozenset[str]:
    return frozenset(part.strip() for part in re.split(r"[|,]", text) if part.strip())


def vendor_match(catalog: VendorCatalog, preferences: Mapping[str, object]) -> float:
    """Half a point for a shared genre, half for a shared trading time."""
    genres = _as_set(preferences.get("genre", ()))
    times = _as_set(preferences.get("trading_time", preferences.get("time", ())))
    if not genres and not times:
        raise ValueError("preferences must name a genre or a trading time")
    score = 0.0
    if genres & catalog.genres:
        score += 0.5
    if times & catalog.trading_times:
        score += 0.5
    return score


def _as_set(value: object) -> frozenset[str]:
    if isinstance(value, str):
        return _split_set(value)
    return frozenset(value)  # type: ignore[arg-type]


def _better(candidate: tuple[str, float], incumbent: tuple[str, float]) -> bool:
    name, score = candidate
    best_name, best_score = incumbent
    if not best_name:
        return True
    return score > best_score or (score == best_score and name < best_name)


# --------------------------------------------------------------------------
# config


@dataclass
class ProviderConfig:
    description: ServiceDescription
    handlers: dict[str, HandlerSpec]
    ttl_s: int = DEFAULT_TTL_S
    document: Optional[bytes] = None

    def __post_init__(self) -> None:
        if self.ttl_s < 1:
            raise ConfigError("advertise ttl must be >= 1 s")
        missing = [op.name for op in self.description.operations if op.name not in self.handlers]
        if missing:
            raise ConfigError(f"{self.description.service_name}: no handler for {missing}")
        unknown = sorted(set(self.handlers) - {op.name for op in self.description.operations})
        if unknown:
            raise ConfigError(f"{self.description.service_name}: handlers for undeclared {unknown}")
        if self.document is None:
            self.document = serialize_service_description(self.description)

    @property
    def name(self) -> str:
        return self.description.service_name

    @property
    def endpoint(self) -> Endpoint:
        return self.description.endpoint_ref


def parse_handler_spec(text: str) -> HandlerSpec:
    kind, _, body = text.partition(":")
    kind = kind.strip()
    if kind == "fault":
        code = body.strip()
        if not _CODE_RE.match(code):
            raise ConfigError(f"bad fault code {code!r}")
        return ScriptedFault(code)
    pairs: dict[str, str] = {}
    for part in filter(None, (p.strip() for p in body.split(","))):
        key, sep, value = part.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"bad key=value {part!r}")
        pairs[key.strip()] = value.strip()
    if kind == "fixture":
        return Fixture({k: infer_scalar(v) for k, v in pairs.items()})
    if kind in ("vendor-catalog", "vendor"):
        extra = set(pairs) - {"items", "genres", "times"}
        if extra:
            raise ConfigError(f"unknown vendor-catalog keys {sorted(extra)}")
        return VendorCatalog(
            tuple(sorted(_split_set(pairs.get("items", "")))),
            _split_set(pairs.get("genres", "")),
            _split_set(pairs.get("times", "")),
        )
    raise ConfigError(f"unknown handler kind {kind!r}")


def format_handler_spec(spec: HandlerSpec) -> str:
    if isinstance(spec, ScriptedFault):
        return f"fault:{spec.code}"
    if isinstance(spec, Fixture):
        return "fixture:" + ",".join(f"{k}={format_scalar(v)}" for k, v in spec.record.items())
    return (
        f"vendor-catalog:genres={'|'.join(sorted(spec.genres))},"
        f"times={'|'.join(sorted(spec.trading_times))},items={'|'.join(spec.items)}"
    )


def parse_handlers(text: str) -> dict[str, HandlerSpec]:
    """Sidecar format: one `operation=kind:body` line per operation; # comments."""
    handlers: dict[str, HandlerSpec] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        op, sep, spec = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected operation=handler")
        op = op.strip()
        if op in handlers:
            raise ConfigError(f"line {lineno}: duplicate handler for {op!r}")
        handlers[op] = parse_handler_spec(spec)
    return handlers


def load_provider_config(
    description_path: Path,
    taxonomy: OperationTaxonomy,
    handlers_path: Optional[Path] = None,
    ttl_s: int = DEFAULT_TTL_S,
) -> ProviderConfig:
    description_path = Path(description_path)
    document = description_path.read_bytes()
    desc = parse_service_description(document, taxonomy)
    if handlers_path is None:
        handlers_path = description_path.with_suffix(".handlers")
    handlers = parse_handlers(Path(handlers_path).read_text("utf-8"))
    return ProviderConfig(desc, handlers, ttl_s, document)


# --------------------------------------------------------------------------
# running provider


@dataclass
class ProviderCounters:
    getdesc: int = 0
    calls: int = 0
    advertisements: int = 0


class ProviderHandle:
    def __init__(self, config: ProviderConfig, net: Transport, group: Endpoint) -> None:
        self.config = config
        self.net = net
        self.group = group
        self.counters = ProviderCounters()
        self.running = False
        self._seq = 0
        self._timer = None

    @property
    def name(self) -> str:
        return self.config.name

    def _start(self) -> None:
        self.net.bind(self.config.endpoint, on_request=self._serve)
        self.running = True
        self._advertise()

    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def _advertise(self) -> None:
        if not self.running:
            return
        desc = self.config.description
        ad = wire.Advertisement(desc.service_name, desc.service_type, self.config.endpoint, self.config.ttl_s, self._next_seq())
        self.net.send(self.config.endpoint, self.group, wire.encode_announcement(ad))
        self.counters.advertisements += 1
        self._timer = self.net.call_later(self.config.ttl_s * 500.0, self._advertise, daemon=True)

    def stop(self, withdraw: bool = True) -> None:
        """Leave the network; `withdraw=False` simulates a silent crash."""
        if not self.running:
            raise NotRunning(self.name)
        if self._timer is not None:
            self._timer.cancel()
        if withdraw:
            msg = wire.Withdrawal(self.name, self._next_seq())
            self.net.send(self.config.endpoint, self.group, wire.encode_announcement(msg))
        self.net.unbind(self.config.endpoint)
        self.running = False

    # -- serving -------------------------------------------------------------

    def _serve(self, payload: bytes, source: Endpoint) -> Union[bytes, Reply]:
        if payload.strip() == wire.GETDESC:
            self.counters.getdesc += 1
            return Reply(wire.encode_description_reply(self.config.document), self.net.fetch_latency_ms)
        try:
            op_name, raw_args = wire.decode_call(payload)
        except wire.WireError:
            return wire.encode_fault("MalformedCall")
        self.counters.calls += 1
        op = self.config.description.operation(op_name)
        if op is None:
            return wire.encode_fault("UnknownOperation")
        if set(raw_args) != set(op.input_names):
            return wire.encode_fault("ArgumentMismatch")
        try:
            args = {name: coerce_scalar(raw_args[name], kind) for name, kind in op.inputs}
        except ArgumentMismatch:
            return wire.encode_fault("ArgumentMismatch")
        spec = self.config.handlers[op_name]
        if isinstance(spec, ScriptedFault):
            return wire.encode_fault(spec.code)
        if isinstance(spec, Fixture):
            record = dict(spec.record)
        else:
            record = self._vendor_answer(spec, args)
        if op.output_kind == RECORD:
            return wire.encode_result(record)
        if "value" not in record:
            return wire.encode_fault("MalformedResult")
        return wire.encode_result({"value": record["value"]})

    def _vendor_answer(self, catalog: VendorCatalog, args: Mapping[str, Scalar]) -> dict[str, Scalar]:
        prefs = {"genre": str(args.get("genre", "")), "trading_time": str(args.get("time", ""))}
        try:
            score = vendor_match(catalog, prefs)
        except ValueError:
            score = 0.0
        mine = (self.name, score)
        incumbent = (str(args.get("best-vendor", "")), float(args.get("best-score", -1.0)))  # type: ignore[arg-type]
        best = mine if _better(mine, incumbent) else incumbent
        return {"vendor": best[0], "score": best[1], "own-score": score}


def provider_start(config: ProviderConfig, net: Transport, group: Endpoint = DEFAULT_GROUP) -> ProviderHandle:
    handle = ProviderHandle(config, net, group)
    handle._start()
    return handle


def provider_stop(handle: ProviderHandle) -> None:
    handle.stop()
