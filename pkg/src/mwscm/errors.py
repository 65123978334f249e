"""Exception hierarchy shared by every mwscm module."""

from __future__ import annotations


class MwscmError(Exception):
    """Base class for all errors raised by this package."""

    @property
    def code(self) -> str:
        return type(self).__name__


# documents

class DocumentError(MwscmError):
    pass


class MalformedDocument(DocumentError):
    pass


class DuplicateSibling(DocumentError):
    pass


class MultipleRoots(DocumentError):
    pass


class UnknownType(DocumentError):
    pass


class NoOperations(DocumentError):
    pass


class ForwardReference(DocumentError):
    pass


class DuplicateTaskId(DocumentError):
    pass


# transport

class ConfigError(MwscmError):
    pass


class UnknownNode(MwscmError):
    pass


class PayloadTooLarge(MwscmError):
    pass


class TransportError(MwscmError):
    pass


class EndpointInUse(MwscmError):
    pass


# discovery

class AlreadyBrowsing(MwscmError):
    pass


class DuplicateName(MwscmError):
    pass


# delegates

class UnknownOperation(MwscmError):
    pass


class ArgumentMismatch(MwscmError):
    pass


class InvocationFault(MwscmError):
    """The provider answered, but with an application-level error code."""

    def __init__(self, fault_code: str, message: str = "") -> None:
        super().__init__(message or fault_code)
        self.fault_code = fault_code


# mediator

class UnknownRequestType(MwscmError):
    pass


class NoProvider(MwscmError):
    pass


class TaskFault(MwscmError):
    def __init__(self, task_id: str, fault_code: str) -> None:
        super().__init__(f"task {task_id}: {fault_code}")
        self.task_id = task_id
        self.fault_code = fault_code


# broker

class MalformedPayload(MwscmError):
    pass


class MissingRequestType(MwscmError):
    pass


# provider

class NotRunning(MwscmError):
    pass


# harness

class ScenarioParseError(MwscmError):
    pass
