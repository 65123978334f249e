from __future__ import annotations

from dataclasses import dataclass, field

import pytest

from mwscm.broker import ClientGateway
from mwscm.discovery import ServicePool
from mwscm.mediator import Mediator, PlanCatalog, ServiceCache
from mwscm.model import (
    OperationSignature,
    OperationTaxonomy,
    ServiceDescription,
    TypePath,
    parse_taxonomy,
)
from mwscm.provider import Fixture, ProviderConfig, ProviderHandle, provider_start
from mwscm.transport import Endpoint, SimConfig, SimNet

TAXONOMY_DOC = (
    b'<taxonomy><type name="positioning"><type name="gps"/><type name="indoor"/></type>'
    b'<type name="media"><type name="dvd-catalog"/></type></taxonomy>'
)
GPS_DOC = (
    b'<service name="gps-1" type="positioning" endpoint="sim://gps-1:80" binding="rest">'
    b'<operation name="locate" type="positioning/gps"><input name="user" kind="string"/>'
    b'<output kind="record"/></operation></service>'
)
LOCATE_DOC = (
    b'<taskdoc request-type="locate-user">'
    b'<task id="t1" operation-type="positioning/gps"><input name="user" from="request:user"/>'
    b'<output slot="gps-fix"/></task>'
    b'<task id="t2" operation-type="positioning/indoor"><input name="user" from="request:user"/>'
    b'<output slot="indoor-fix"/></task></taskdoc>'
)

POOL_EP = Endpoint("sim", "mediator", 5353)
MEDIATOR_EP = Endpoint("sim", "mediator", 80)


@pytest.fixture
def taxonomy() -> OperationTaxonomy:
    return parse_taxonomy(TAXONOMY_DOC)


def tp(text: str) -> TypePath:
    return TypePath.parse(text)


def locate_provider(name: str, op_type: str, record: dict | None = None, ttl_s: int = 10) -> ProviderConfig:
    desc = ServiceDescription(
        name,
        tp(op_type.split("/")[0]),
        f"sim://{name}:80",
        "rest",
        (OperationSignature("locate", tp(op_type), (("user", "string"),), "record"),),
    )
    return ProviderConfig(desc, {"locate": Fixture(record or {"provider": name})}, ttl_s)


@dataclass
class World:
    net: SimNet
    pool: ServicePool
    cache: ServiceCache
    mediator: Mediator
    gateway: ClientGateway
    handles: dict[str, ProviderHandle] = field(default_factory=dict)

    def start(self, config: ProviderConfig) -> ProviderHandle:
        handle = provider_start(config, self.net)
        self.handles[config.name] = handle
        return handle


def make_world(
    taxonomy: OperationTaxonomy,
    plans=(),
    providers=(),
    *,
    sim: SimConfig | None = None,
    browse_ms: float = 100.0,
    memoize: bool = True,
    converge: bool = True,
) -> World:
    net = SimNet(sim or SimConfig())
    pool = ServicePool(taxonomy, net, POOL_EP, memoize_descriptions=memoize)
    cache = ServiceCache(taxonomy=taxonomy)
    mediator = Mediator(PlanCatalog.from_documents(plans), pool, cache, net, MEDIATOR_EP)
    world = World(net, pool, cache, mediator, ClientGateway(mediator))
    pool.browse_start(browse_ms)
    for config in providers:
        world.start(config)
    if converge:
        net.run_for(2 * browse_ms)
    return world


# acceptance reporting: one PASS/FAIL line per criterion in the terminal summary
ACCEPTANCE_RESULTS: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        title, passed, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}  {detail}")
