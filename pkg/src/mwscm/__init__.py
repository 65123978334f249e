"""Registry-less mobile web service composition mediator.

Providers advertise themselves on a multicast group, the service pool turns
their descriptions into delegates, and the task manager composes delegate
calls according to task organization documents, caching discovered
delegates per operation type.
"""

from .broker import ClientFormat, ClientGateway, format_response, normalize
from .delegate import ServiceDelegate, create_delegate
from .discovery import ServicePool
from .mediator import Mediator, PlanCatalog, RequestTrace, ServiceCache, select_best
from .model import (
    NormalizedRequest,
    NormalizedResponse,
    OperationTaxonomy,
    ServiceDescription,
    TaskOrganizationDocument,
    TypePath,
    is_subtype,
    parse_service_description,
    parse_task_document,
    parse_taxonomy,
)
from .provider import ProviderConfig, provider_start
from .transport import Endpoint, SimConfig, SimNet

__version__ = "0.1.0"

__all__ = [
    "ClientFormat",
    "ClientGateway",
    "Endpoint",
    "Mediator",
    "NormalizedRequest",
    "NormalizedResponse",
    "OperationTaxonomy",
    "PlanCatalog",
    "ProviderConfig",
    "RequestTrace",
    "ServiceCache",
    "ServiceDelegate",
    "ServiceDescription",
    "ServicePool",
    "SimConfig",
    "SimNet",
    "TaskOrganizationDocument",
    "TypePath",
    "create_delegate",
    "format_response",
    "is_subtype",
    "normalize",
    "parse_service_description",
    "parse_task_document",
    "parse_taxonomy",
    "provider_start",
    "select_best",
]
