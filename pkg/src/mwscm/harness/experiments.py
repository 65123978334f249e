"""Cache-sweep experiments on the simulator.

Each world has N identical providers that all offer one operation per task
type, and a single plan of T sequential tasks. For a cache fraction f the
first floor(f*T) tasks may use the service cache; the rest always go to the
service pool, which (as in the uncached path being measured) re-fetches and
re-parses every provider description. Each repetition runs a warm-up request
and then times a second, identical request in virtual milliseconds.
"""

from __future__ import annotations

import csv
import io
import math
import statistics
from dataclasses import dataclass, field, replace

from ..broker import ClientGateway
from ..discovery import ServicePool
from ..errors import ConfigError
from ..mediator import Mediator, PlanCatalog, RequestTrace, ServiceCache
from ..model import (
    OperationSignature,
    OperationTaxonomy,
    RequestRef,
    ServiceDescription,
    Task,
    TaskOrganizationDocument,
    TypePath,
)
from ..provider import Fixture, ProviderConfig, ProviderHandle, provider_start
from ..transport.base import Endpoint
from ..transport.sim import SimConfig, SimNet

CSV_HEADER = ("setting", "x", "mean_ms", "stddev_ms")
DEFAULT_FRACTIONS = (0.0, 0.25, 0.5, 1.0)
REQUEST = b'{"type":"composite","x":"probe"}'


@dataclass(frozen=True)
class ExperimentConfig:
    providers: tuple[int, ...] = (5,)
    tasks: tuple[int, ...] = (4,)
    cache_fractions: tuple[float, ...] = DEFAULT_FRACTIONS
    repetitions: int = 20
    sim: SimConfig = field(default_factory=SimConfig)
    seed: int = 42
    browse_interval_ms: float = 100.0

    def __post_init__(self) -> None:
        if not self.providers or any(n < 1 for n in self.providers):
            raise ConfigError("provider counts must be >= 1")
        if not self.tasks or any(t < 1 for t in self.tasks):
            raise ConfigError("task counts must be >= 1")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if not self.cache_fractions:
            raise ConfigError("at least one cache fraction is required")
        if any(not 0.0 <= f <= 1.0 for f in self.cache_fractions):
            raise ConfigError("cache fractions must lie in [0, 1]")
        if list(self.cache_fractions) != sorted(self.cache_fractions):
            raise ConfigError("cache fractions must be sorted ascending")
        if self.browse_interval_ms <= 0:
            raise ConfigError("browse interval must be > 0")


def cache_eligible(fraction: float, n_tasks: int) -> int:
    # tolerate binary noise such as 0.29 * 100
    return math.floor(fraction * n_tasks + 1e-9)


def task_type(k: int) -> TypePath:
    return TypePath(("exp", f"task-{k}"))


def build_taxonomy(n_tasks: int) -> OperationTaxonomy:
    return OperationTaxonomy.from_paths([str(task_type(k)) for k in range(1, n_tasks + 1)])


def build_plan(n_tasks: int) -> TaskOrganizationDocument:
    tasks = tuple(
        Task(f"t{k}", task_type(k), (("x", RequestRef("x")),), f"out-{k}") for k in range(1, n_tasks + 1)
    )
    return TaskOrganizationDocument("composite", tasks)


def build_provider(index: int, n_tasks: int) -> ProviderConfig:
    name = f"svc-{index:02d}"
    ops = tuple(
        OperationSignature(f"op-{k}", task_type(k), (("x", "string"),), "record") for k in range(1, n_tasks + 1)
    )
    desc = ServiceDescription(name, TypePath(("exp",)), f"sim://{name}:80", "rest", ops)
    handlers = {op.name: Fixture({"provider": name, "task": k}) for k, op in enumerate(ops, 1)}
    return ProviderConfig(desc, handlers)


@dataclass
class World:
    net: SimNet
    pool: ServicePool
    cache: ServiceCache
    mediator: Mediator
    gateway: ClientGateway
    handles: list[ProviderHandle]


def build_world(
    n_providers: int,
    n_tasks: int,
    eligible: int,
    sim: SimConfig,
    browse_interval_ms: float = 100.0,
) -> World:
    """A converged world: providers advertised and folded into the pool."""
    taxonomy = build_taxonomy(n_tasks)
    net = SimNet(sim)
    pool = ServicePool(taxonomy, net, Endpoint("sim", "mediator", 5353), memoize_descriptions=False)
    cache = ServiceCache(taxonomy=taxonomy)
    cached_types = {task_type(k) for k in range(1, eligible + 1)}
    mediator = Mediator(
        PlanCatalog.from_documents([build_plan(n_tasks)]),
        pool,
        cache,
        net,
        Endpoint("sim", "mediator", 80),
        cache_policy=lambda task: task.op_type in cached_types,
    )
    pool.browse_start(browse_interval_ms)
    handles = [provider_start(build_provider(i, n_tasks), net) for i in range(1, n_providers + 1)]
    net.run_for(2 * browse_interval_ms)
    return World(net, pool, cache, mediator, ClientGateway(mediator), handles)


def measure(world: World, repetitions: int) -> tuple[list[float], RequestTrace]:
    """Completion time of the measured (post warm-up) request of every repetition."""
    times = []
    trace = RequestTrace()
    for _ in range(repetitions):
        _, warm, _ = world.gateway.submit(REQUEST, "json")
        if not warm.is_ok:
            raise RuntimeError(f"warm-up request failed: {warm.error_code}")
        started = world.net.now()
        _, response, trace = world.gateway.submit(REQUEST, "json")
        if not response.is_ok:
            raise RuntimeError(f"measured request failed: {response.error_code}")
        times.append(world.net.now() - started)
    return times, trace


@dataclass(frozen=True)
class Row:
    setting: str
    x: int
    mean_ms: float
    stddev_ms: float
    trace: RequestTrace = field(compare=False, repr=False, default_factory=RequestTrace)


def _run(config: ExperimentConfig, points: list[tuple[int, int, int]]) -> list[Row]:
    """points: (x, n_providers, n_tasks)."""
    sim = replace(config.sim, seed=config.seed)
    rows = []
    for fraction in config.cache_fractions:
        for x, n, t in points:
            world = build_world(n, t, cache_eligible(fraction, t), sim, config.browse_interval_ms)
            times, trace = measure(world, config.repetitions)
            rows.append(Row(f"{fraction:g}", x, statistics.fmean(times), statistics.pstdev(times), trace))
    return rows


def experiment_providers(config: ExperimentConfig) -> list[Row]:
    """Sweep the number of matching providers at a fixed task count."""
    t = config.tasks[0]
    return _run(config, [(n, n, t) for n in config.providers])


def experiment_tasks(config: ExperimentConfig) -> list[Row]:
    """Sweep the number of tasks per request at a fixed provider count."""
    n = config.providers[0]
    return _run(config, [(t, n, t) for t in config.tasks])


def rows_to_csv(rows: list[Row]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow([row.setting, row.x, f"{row.mean_ms:.3f}", f"{row.stddev_ms:.3f}"])
    return buf.getvalue()


def traces_to_csv(rows: list[Row]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["setting", "x", "step", "label", "clock_ms", "task_id"])
    for row in rows:
        for s in row.trace.steps:
            writer.writerow([row.setting, row.x, s.step, s.label, f"{s.clock_ms:.3f}", s.task_id or ""])
    return buf.getvalue()

