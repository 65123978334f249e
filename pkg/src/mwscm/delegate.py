"""Service delegates: local proxies for one operation of one remote provider."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from typing import Mapping

from . import wire
from .errors import ArgumentMismatch, InvocationFault, TransportError, UnknownOperation
from .model import (
    RECORD,
    OperationSignature,
    Scalar,
    ServiceDescription,
    Value,
    coerce_scalar,
    infer_scalar,
    scalar_matches,
)
from .transport.base import Endpoint, Transport

log = logging.getLogger(__name__)

RTT_ALPHA = 0.3


@dataclass
class ProviderStatus:
    reachable: bool = True
    rtt_ewma_ms: float = 0.0  # 0 means no sample yet
    consecutive_failures: int = 0
    samples: int = 0

    def record_success(self, rtt_ms: float) -> None:
        if self.samples == 0:
            self.rtt_ewma_ms = rtt_ms
        else:
            self.rtt_ewma_ms = RTT_ALPHA * rtt_ms + (1 - RTT_ALPHA) * self.rtt_ewma_ms
        self.samples += 1
        self.reachable = True
        self.consecutive_failures = 0

    def record_failure(self) -> None:
        self.reachable = False
        self.consecutive_failures += 1


@dataclass
class ServiceDelegate:
    service_name: str
    endpoint: Endpoint
    operation: OperationSignature
    status: ProviderStatus = field(default_factory=ProviderStatus)

    def check_args(self, args: Mapping[str, Scalar]) -> None:
        expected = self.operation.input_names
        if set(args) != set(expected):
            missing = sorted(set(expected) - set(args))
            extra = sorted(set(args) - set(expected))
            raise ArgumentMismatch(
                f"{self.service_name}.{self.operation.name}: missing {missing}, unexpected {extra}"
            )
        for name, kind in self.operation.inputs:
            if not scalar_matches(args[name], kind):
                raise ArgumentMismatch(f"{self.service_name}.{self.operation.name}: {name} must be {kind}")

    def invoke(self, args: Mapping[str, Scalar], net: Transport, source: Endpoint) -> Value:
        """Call the remote operation and update the provider status.

        Arguments are validated before anything is sent. A transport failure
        marks the delegate unreachable; an application error from the
        provider raises `InvocationFault` and leaves reachability intact.
        """
        self.check_args(args)
        ordered = {name: args[name] for name in self.operation.input_names}
        payload = wire.encode_call(self.operation.name, ordered)
        started = net.now()
        try:
            raw = net.request(source, self.endpoint, payload)
            result = wire.decode_result(raw)
        except (TransportError, wire.WireError) as exc:
            self.status.record_failure()
            log.info("invoke %s.%s failed: %s", self.service_name, self.operation.name, exc)
            if isinstance(exc, TransportError):
                raise
            raise TransportError(str(exc)) from exc
        self.status.record_success(net.now() - started)
        if not result.ok:
            raise InvocationFault(result.fault or "UnknownFault")
        return decode_output(result.values, self.operation.output_kind)

    def clone(self) -> "ServiceDelegate":
        return copy.deepcopy(self)


def decode_output(values: Mapping[str, str], kind: str) -> Value:
    if kind == RECORD:
        return {key: infer_scalar(text) for key, text in values.items()}
    if "value" not in values:
        raise InvocationFault("MalformedResult", "scalar result without a value= line")
    try:
        return coerce_scalar(values["value"], kind)
    except ArgumentMismatch as exc:
        raise InvocationFault("MalformedResult", str(exc)) from exc


def create_delegate(desc: ServiceDescription, op_name: str) -> ServiceDelegate:
    op = desc.operation(op_name)
    if op is None:
        raise UnknownOperation(f"{desc.service_name} has no operation {op_name!r}")
    return ServiceDelegate(desc.service_name, desc.endpoint_ref, op)


def invoke(delegate: ServiceDelegate, args: Mapping[str, Scalar], net: Transport, source: Endpoint) -> Value:
    return delegate.invoke(args, net, source)
