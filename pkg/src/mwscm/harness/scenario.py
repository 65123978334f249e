"""Scenario files: a topology plus a request script, run on the simulator.

A scenario is a line-oriented text file. Paths are relative to the file::

    taxonomy taxonomy.xml
    plan plans/locate-user.xml          # or: plans <directory>
    provider providers/gps-1.sd         # handlers default to gps-1.handlers
    sim link=5 fetch=50 drop=0 seed=42
    browse 100
    advance 250
    request urlencoded type=locate-user&user=alice
    stop gps-1                          # withdraw; `crash` leaves silently
"""

from __future__ import annotations

import shlex
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

from ..broker import ClientFormat, ClientGateway, normalize
from ..discovery import ServicePool
from ..errors import ConfigError, DocumentError, MwscmError, ScenarioParseError
from ..mediator import DEFAULT_CACHE_TTL_MS, Mediator, PlanCatalog, RequestTrace, ServiceCache
from ..model import NormalizedResponse, OperationTaxonomy, parse_task_document, parse_taxonomy
from ..provider import ProviderConfig, ProviderHandle, load_provider_config, provider_start
from ..transport.base import Endpoint
from ..transport.sim import SimConfig, SimNet

MEDIATOR_ENDPOINT = Endpoint("sim", "mediator", 80)
POOL_ENDPOINT = Endpoint("sim", "mediator", 5353)


@dataclass
class ScriptStep:
    action: str  # advance | request | stop | crash
    arg: str
    fmt: Optional[ClientFormat] = None
    line: int = 0


@dataclass
class Scenario:
    taxonomy: OperationTaxonomy
    plans: PlanCatalog
    providers: list[ProviderConfig]
    script: list[ScriptStep]
    sim: SimConfig = field(default_factory=SimConfig)
    browse_ms: float = 100.0
    cache_ttl_ms: float = DEFAULT_CACHE_TTL_MS
    source: Optional[Path] = None

    def provider(self, name: str) -> ProviderConfig:
        for config in self.providers:
            if config.name == name:
                return config
        raise KeyError(name)


@dataclass
class ScenarioResult:
    exit_code: int
    bodies: list[bytes]
    responses: list[NormalizedResponse]
    traces: list[RequestTrace]
    net: SimNet
    pool: ServicePool
    mediator: Mediator
    handles: dict[str, ProviderHandle]

    def trace_csv(self) -> str:
        parts = [RequestTrace().to_csv()]
        parts.extend(trace.to_csv(header=False) for trace in self.traces)
        return "".join(parts)

    def response_text(self) -> str:
        return "".join(body.decode("utf-8") + "\n" for body in self.bodies)


def shipped_scenarios() -> dict[str, Path]:
    root = resources.files("mwscm") / "scenarios"
    found = {}
    for entry in root.iterdir():
        if entry.is_dir():
            for scn in entry.iterdir():
                if scn.name.endswith(".scn"):
                    found[scn.name[:-4]] = Path(str(scn))
    return dict(sorted(found.items()))


def resolve_scenario_path(name: str) -> Path:
    path = Path(name)
    if path.exists():
        return path
    shipped = shipped_scenarios()
    key = path.name[:-4] if path.name.endswith(".scn") else path.name
    if key in shipped:
        return shipped[key]
    raise ScenarioParseError(f"no scenario file {name!r} (shipped: {', '.join(shipped)})")


def _kv(tokens: list[str], lineno: int) -> dict[str, str]:
    out = {}
    for tok in tokens:
        key, sep, value = tok.partition("=")
        if not sep:
            raise ScenarioParseError(f"line {lineno}: expected key=value, got {tok!r}")
        out[key] = value
    return out


def _number(text: str, lineno: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise ScenarioParseError(f"line {lineno}: {text!r} is not a number") from None


def parse_scenario(path: Path) -> Scenario:
    path = Path(path)
    base = path.parent
    try:
        lines = path.read_text("utf-8").splitlines()
    except OSError as exc:
        raise ScenarioParseError(str(exc)) from exc

    taxonomy: Optional[OperationTaxonomy] = None
    plan_paths: list[tuple[Path, int]] = []
    provider_lines: list[tuple[list[str], int]] = []
    script: list[ScriptStep] = []
    sim = SimConfig()
    browse_ms = 100.0
    cache_ttl = DEFAULT_CACHE_TTL_MS

    try:
        for lineno, raw in enumerate(lines, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            keyword, _, rest = line.partition(" ")
            rest = rest.strip()
            if keyword == "request":
                fmt_text, _, payload = rest.partition(" ")
                script.append(ScriptStep("request", payload.strip(), ClientFormat.parse(fmt_text), lineno))
                continue
            tokens = shlex.split(rest.split(" #", 1)[0])
            if keyword == "taxonomy":
                taxonomy = parse_taxonomy((base / tokens[0]).read_bytes())
            elif keyword == "plan":
                plan_paths.extend((base / t, lineno) for t in tokens)
            elif keyword == "plans":
                plan_paths.extend((p, lineno) for p in sorted((base / tokens[0]).glob("*.xml")))
            elif keyword == "provider":
                provider_lines.append((tokens, lineno))
            elif keyword == "sim":
                kv = _kv(tokens, lineno)
                sim = SimConfig(
                    link_latency_ms=_number(kv.pop("link", "5"), lineno),
                    fetch_latency_ms=_number(kv.pop("fetch", "50"), lineno),
                    drop_probability=_number(kv.pop("drop", "0"), lineno),
                    seed=int(_number(kv.pop("seed", "0"), lineno)),
                )
                if kv:
                    raise ScenarioParseError(f"line {lineno}: unknown sim keys {sorted(kv)}")
            elif keyword == "browse":
                browse_ms = _number(tokens[0], lineno)
            elif keyword == "cache-ttl":
                cache_ttl = _number(tokens[0], lineno)
            elif keyword in ("advance", "stop", "crash"):
                if len(tokens) != 1:
                    raise ScenarioParseError(f"line {lineno}: {keyword} takes one argument")
                if keyword == "advance":
                    _number(tokens[0], lineno)
                script.append(ScriptStep(keyword, tokens[0], None, lineno))
            else:
                raise ScenarioParseError(f"line {lineno}: unknown directive {keyword!r}")
    except IndexError:
        raise ScenarioParseError(f"{path}: directive is missing its argument") from None
    except (OSError, DocumentError, ConfigError, MwscmError, ValueError) as exc:
        if isinstance(exc, ScenarioParseError):
            raise
        raise ScenarioParseError(f"{path}: {exc}") from exc

    if taxonomy is None:
        raise ScenarioParseError(f"{path}: no taxonomy directive")

    try:
        plans = PlanCatalog()
        for plan_path, lineno in plan_paths:
            plans.add(parse_task_document(plan_path.read_bytes(), taxonomy))
        providers = []
        for tokens, lineno in provider_lines:
            opts = _kv([t for t in tokens[1:] if "=" in t], lineno)
            handlers = [t for t in tokens[1:] if "=" not in t]
            providers.append(
                load_provider_config(
                    base / tokens[0],
                    taxonomy,
                    base / handlers[0] if handlers else None,
                    int(opts.get("ttl", "10")),
                )
            )
    except ScenarioParseError:
        raise
    except (OSError, MwscmError, ValueError) as exc:
        raise ScenarioParseError(f"{path}: {exc}") from exc

    names = [p.name for p in providers]
    if len(set(names)) != len(names):
        raise ScenarioParseError(f"{path}: duplicate provider names")
    for step in script:
        if step.action == "request":
            try:
                req = normalize(step.arg.encode("utf-8"), step.fmt)
            except MwscmError as exc:
                raise ScenarioParseError(f"line {step.line}: bad request payload: {exc}") from exc
            if req.request_type not in plans:
                raise ScenarioParseError(f"line {step.line}: no plan for request type {req.request_type!r}")
        elif step.action in ("stop", "crash") and step.arg not in names:
            raise ScenarioParseError(f"line {step.line}: unknown provider {step.arg!r}")

    return Scenario(taxonomy, plans, providers, script, sim, browse_ms, cache_ttl, path)


def run_scenario(scenario: Scenario) -> ScenarioResult:
    net = SimNet(scenario.sim)
    pool = ServicePool(scenario.taxonomy, net, POOL_ENDPOINT)
    cache = ServiceCache(scenario.cache_ttl_ms, scenario.taxonomy)
    mediator = Mediator(scenario.plans, pool, cache, net, MEDIATOR_ENDPOINT)
    gateway = ClientGateway(mediator)
    pool.browse_start(scenario.browse_ms)
    handles = {config.name: provider_start(config, net) for config in scenario.providers}

    bodies: list[bytes] = []
    responses: list[NormalizedResponse] = []
    traces: list[RequestTrace] = []
    for step in scenario.script:
        if step.action == "advance":
            net.run_for(float(step.arg))
        elif step.action == "stop":
            handles[step.arg].stop()
        elif step.action == "crash":
            handles[step.arg].stop(withdraw=False)
        else:
            body, response, trace = gateway.submit(step.arg.encode("utf-8"), step.fmt)
            bodies.append(body)
            responses.append(response)
            traces.append(trace)
    exit_code = 0 if all(r.is_ok for r in responses) else 1
    return ScenarioResult(exit_code, bodies, responses, traces, net, pool, mediator, handles)


def write_outputs(result: ScenarioResult, trace_path: Path, response_path: Path) -> None:
    Path(trace_path).write_text(result.trace_csv(), "utf-8")
    Path(response_path).write_text(result.response_text(), "utf-8")
