"""Documents exchanged by the mediator and the normalized request/response forms.

Three XML-ish document kinds are parsed and serialized here: the operation
type taxonomy, service descriptions and task organization documents. The
serializers emit one canonical byte form (no whitespace, fixed attribute
order) so that ``serialize(parse(doc)) == doc`` holds for canonical input.
"""

from __future__ import annotations

import math
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Optional, Union
from xml.sax.saxutils import escape

from .errors import (
    ArgumentMismatch,
    DuplicateSibling,
    DuplicateTaskId,
    ForwardReference,
    MalformedDocument,
    MultipleRoots,
    NoOperations,
    UnknownType,
)
from .transport.base import Endpoint

SCALAR_KINDS = ("string", "int", "float", "bool")
RECORD = "record"
RESERVED_SLOTS = frozenset({"status", "code"})
BINDINGS = ("rest", "socket")

Scalar = Union[str, int, float, bool]
Value = Union[Scalar, dict]

SEGMENT_RE = re.compile(r"^[a-z0-9-]+$")
NAME_RE = re.compile(r"^[a-z0-9][a-z0-9_-]*$")
_INT_RE = re.compile(r"^[+-]?[0-9]+$")
_ATTR_ESCAPES = {'"': "&quot;", "\n": "&#10;", "\r": "&#13;", "\t": "&#9;"}
_DEFAULT_ROOT = "op"


def _attr(value: str) -> str:
    return '"' + escape(value, _ATTR_ESCAPES) + '"'


# --------------------------------------------------------------------------
# scalars


def format_scalar(value: Scalar) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def coerce_scalar(value: Scalar, kind: str) -> Scalar:
    """Convert `value` to `kind`, accepting the textual form of each kind."""
    if kind == "string":
        return value if isinstance(value, str) else format_scalar(value)
    if kind == "bool":
        if isinstance(value, bool):
            return value
        if value in ("true", "false"):
            return value == "true"
    elif kind == "int":
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        if isinstance(value, str) and _INT_RE.match(value):
            return int(value)
    elif kind == "float":
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                pass
    else:
        raise ArgumentMismatch(f"unknown scalar kind {kind!r}")
    raise ArgumentMismatch(f"{value!r} is not a valid {kind}")


def scalar_matches(value: object, kind: str) -> bool:
    if kind == "string":
        return isinstance(value, str)
    if kind == "bool":
        return isinstance(value, bool)
    if kind == "int":
        return isinstance(value, int) and not isinstance(value, bool)
    if kind == "float":
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    return False


def infer_scalar(text: str) -> Scalar:
    """Best-effort typed reading of an untyped wire value (record fields)."""
    if text in ("true", "false"):
        return text == "true"
    if _INT_RE.match(text):
        return int(text)
    try:
        number = float(text)
    except ValueError:
        return text
    return number if math.isfinite(number) else text


# --------------------------------------------------------------------------
# operation taxonomy


@dataclass(frozen=True, order=True)
class TypePath:
    segments: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.segments:
            raise ValueError("a type path needs at least one segment")
        for seg in self.segments:
            if not SEGMENT_RE.match(seg):
                raise ValueError(f"invalid type path segment {seg!r}")

    @classmethod
    def parse(cls, text: str) -> "TypePath":
        return cls(tuple(text.split("/")))

    def is_prefix_of(self, other: "TypePath") -> bool:
        n = len(self.segments)
        return other.segments[:n] == self.segments

    def child(self, name: str) -> "TypePath":
        return TypePath(self.segments + (name,))

    def __str__(self) -> str:
        return "/".join(self.segments)


@dataclass(frozen=True)
class TaxonomyNode:
    name: str
    children: tuple["TaxonomyNode", ...] = ()

    def child(self, name: str) -> Optional["TaxonomyNode"]:
        for c in self.children:
            if c.name == name:
                return c
        return None


@dataclass(frozen=True)
class OperationTaxonomy:
    root: TaxonomyNode

    def resolve(self, path: TypePath) -> TaxonomyNode:
        node = self.root
        for seg in path.segments:
            nxt = node.child(seg)
            if nxt is None:
                raise UnknownType(f"{path} does not resolve in the taxonomy")
            node = nxt
        return node

    def contains(self, path: TypePath) -> bool:
        try:
            self.resolve(path)
        except UnknownType:
            return False
        return True

    def paths(self) -> Iterator[TypePath]:
        """Every addressable path, depth-first in document order."""

        def walk(node: TaxonomyNode, prefix: tuple[str, ...]) -> Iterator[TypePath]:
            for c in node.children:
                path = prefix + (c.name,)
                yield TypePath(path)
                yield from walk(c, path)

        return walk(self.root, ())

    def node_count(self) -> int:
        return 1 + sum(1 for _ in self.paths())

    @classmethod
    def from_paths(cls, paths: list[str], root: str = _DEFAULT_ROOT) -> "OperationTaxonomy":
        """Build a taxonomy containing every path (and its prefixes), in first-seen order."""
        tree: dict = {}
        for text in paths:
            level = tree
            for seg in TypePath.parse(text).segments:
                level = level.setdefault(seg, {})

        def build(name: str, sub: dict) -> TaxonomyNode:
            return TaxonomyNode(name, tuple(build(k, v) for k, v in sub.items()))

        return cls(build(root, tree))


def is_subtype(candidate: TypePath, requested: TypePath, taxonomy: OperationTaxonomy) -> bool:
    """True when `candidate` equals or descends from `requested`."""
    taxonomy.resolve(candidate)
    taxonomy.resolve(requested)
    return requested.is_prefix_of(candidate)


# --------------------------------------------------------------------------
# service descriptions


@dataclass(frozen=True)
class OperationSignature:
    name: str
    op_type: TypePath
    inputs: tuple[tuple[str, str], ...] = ()
    output_kind: str = RECORD

    @property
    def input_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.inputs)


@dataclass(frozen=True)
class ServiceDescription:
    service_name: str
    service_type: TypePath
    endpoint: str
    binding: str
    operations: tuple[OperationSignature, ...]

    @property
    def endpoint_ref(self) -> Endpoint:
        return Endpoint.parse(self.endpoint)

    def operation(self, name: str) -> Optional[OperationSignature]:
        for op in self.operations:
            if op.name == name:
                return op
        return None


# --------------------------------------------------------------------------
# task organization documents


@dataclass(frozen=True)
class LiteralBinding:
    value: str


@dataclass(frozen=True)
class RequestRef:
    field: str


@dataclass(frozen=True)
class SlotRef:
    slot: str
    field: Optional[str] = None


Binding = Union[LiteralBinding, RequestRef, SlotRef]


@dataclass(frozen=True)
class Task:
    task_id: str
    op_type: TypePath
    inputs: tuple[tuple[str, Binding], ...]
    output_slot: str
    # optional pin to one provider; used by plans that must visit several peers
    provider: Optional[str] = None


@dataclass(frozen=True)
class TaskOrganizationDocument:
    request_type: str
    tasks: tuple[Task, ...] = ()


# --------------------------------------------------------------------------
# normalized request / response


@dataclass(frozen=True)
class NormalizedRequest:
    request_type: str
    params: Mapping[str, Scalar] = field(default_factory=dict)
    client_format: str = "json"

    def __post_init__(self) -> None:
        if not self.request_type:
            raise ValueError("request_type must be non-empty")


@dataclass(frozen=True)
class TaskRecord:
    task_id: str
    service_name: str
    elapsed_ms: float
    cache_hit: bool


@dataclass
class NormalizedResponse:
    status: str  # "ok" or "error"
    results: dict[str, Value] = field(default_factory=dict)
    provenance: list[TaskRecord] = field(default_factory=list)
    error_code: Optional[str] = None

    @classmethod
    def ok(cls, results: dict[str, Value], provenance: list[TaskRecord]) -> "NormalizedResponse":
        return cls("ok", results, provenance)

    @classmethod
    def error(cls, code: str) -> "NormalizedResponse":
        return cls("error", {}, [], code)

    @property
    def is_ok(self) -> bool:
        return self.status == "ok"


# --------------------------------------------------------------------------
# XML plumbing


def _load_root(document: bytes, tag: str) -> ET.Element:
    try:
        text = document.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedDocument(f"not UTF-8: {exc}") from exc
    text = re.sub(r"^\ufeff?\s*<\?xml[^>]*\?>", "", text)
    if not text.strip():
        raise MalformedDocument("empty document")
    try:
        # wrapping lets us tell "two roots" apart from other syntax errors
        container = ET.fromstring(f"<mwscm-document>{text}</mwscm-document>")
    except ET.ParseError as exc:
        raise MalformedDocument(str(exc)) from exc
    _no_text(container)
    elements = list(container)
    if not elements:
        raise MalformedDocument("no document element")
    for el in elements:
        if el.tag != tag:
            raise MalformedDocument(f"expected <{tag}>, found <{el.tag}>")
    if len(elements) > 1:
        raise MultipleRoots(f"{len(elements)} <{tag}> roots")
    return elements[0]


def _no_text(el: ET.Element) -> None:
    if el.text and el.text.strip():
        raise MalformedDocument(f"unexpected text in <{el.tag}>")
    for child in el:
        if child.tail and child.tail.strip():
            raise MalformedDocument(f"unexpected text after <{child.tag}>")


def _attrs(el: ET.Element, required: tuple[str, ...], optional: tuple[str, ...] = ()) -> dict[str, str]:
    extra = set(el.attrib) - set(required) - set(optional)
    if extra:
        raise MalformedDocument(f"<{el.tag}> has unknown attributes {sorted(extra)}")
    missing = [a for a in required if a not in el.attrib]
    if missing:
        raise MalformedDocument(f"<{el.tag}> is missing {missing}")
    return dict(el.attrib)


def _name(value: str, what: str, pattern: re.Pattern = NAME_RE) -> str:
    if not pattern.match(value):
        raise MalformedDocument(f"invalid {what} {value!r}")
    return value


def _type_path(value: str, taxonomy: OperationTaxonomy) -> TypePath:
    try:
        path = TypePath.parse(value)
    except ValueError as exc:
        raise MalformedDocument(str(exc)) from exc
    taxonomy.resolve(path)
    return path


def _children(el: ET.Element, tag: str) -> list[ET.Element]:
    _no_text(el)
    for child in el:
        if child.tag != tag:
            raise MalformedDocument(f"unexpected <{child.tag}> inside <{el.tag}>")
    return list(el)


# --------------------------------------------------------------------------
# taxonomy documents


def parse_taxonomy(document: bytes) -> OperationTaxonomy:
    root = _load_root(document, "taxonomy")
    attrs = _attrs(root, (), ("name",))
    root_name = _name(attrs.get("name", _DEFAULT_ROOT), "root name", SEGMENT_RE)

    def build(el: ET.Element, name: str) -> TaxonomyNode:
        seen: set[str] = set()
        children = []
        for child in _children(el, "type"):
            child_name = _name(_attrs(child, ("name",))["name"], "type name", SEGMENT_RE)
            if child_name in seen:
                raise DuplicateSibling(f"{child_name!r} appears twice under {name!r}")
            seen.add(child_name)
            children.append(build(child, child_name))
        return TaxonomyNode(name, tuple(children))

    return OperationTaxonomy(build(root, root_name))


def serialize_taxonomy(taxonomy: OperationTaxonomy) -> bytes:
    def emit(node: TaxonomyNode) -> str:
        inner = "".join(emit(c) for c in node.children)
        if not inner:
            return f"<type name={_attr(node.name)}/>"
        return f"<type name={_attr(node.name)}>{inner}</type>"

    root = taxonomy.root
    head = "<taxonomy" + ("" if root.name == _DEFAULT_ROOT else f" name={_attr(root.name)}")
    inner = "".join(emit(c) for c in root.children)
    text = f"{head}/>" if not inner else f"{head}>{inner}</taxonomy>"
    return text.encode("utf-8")


# --------------------------------------------------------------------------
# service description documents


def parse_service_description(document: bytes, taxonomy: OperationTaxonomy) -> ServiceDescription:
    root = _load_root(document, "service")
    attrs = _attrs(root, ("name", "type", "endpoint", "binding"))
    name = _name(attrs["name"], "service name")
    service_type = _type_path(attrs["type"], taxonomy)
    try:
        Endpoint.parse(attrs["endpoint"])
    except ValueError as exc:
        raise MalformedDocument(str(exc)) from exc
    if attrs["binding"] not in BINDINGS:
        raise MalformedDocument(f"unknown binding {attrs['binding']!r}")

    operations = []
    for op_el in _children(root, "operation"):
        op_attrs = _attrs(op_el, ("name", "type"))
        op_name = _name(op_attrs["name"], "operation name")
        if any(o.name == op_name for o in operations):
            raise MalformedDocument(f"operation {op_name!r} declared twice")
        op_type = _type_path(op_attrs["type"], taxonomy)
        _no_text(op_el)
        inputs: list[tuple[str, str]] = []
        output_kind = None
        for child in op_el:
            if child.tag == "input":
                a = _attrs(child, ("name", "kind"))
                param = _name(a["name"], "parameter name")
                if a["kind"] not in SCALAR_KINDS:
                    raise MalformedDocument(f"parameter kind must be scalar, got {a['kind']!r}")
                if any(p == param for p, _ in inputs):
                    raise MalformedDocument(f"parameter {param!r} declared twice")
                if output_kind is not None:
                    raise MalformedDocument("<input> after <output>")
                inputs.append((param, a["kind"]))
            elif child.tag == "output":
                kind = _attrs(child, ("kind",))["kind"]
                if kind not in SCALAR_KINDS + (RECORD,):
                    raise MalformedDocument(f"unknown output kind {kind!r}")
                if output_kind is not None:
                    raise MalformedDocument("operation declares two outputs")
                _children(child, "-")
                output_kind = kind
            else:
                raise MalformedDocument(f"unexpected <{child.tag}> inside <operation>")
        if output_kind is None:
            raise MalformedDocument(f"operation {op_name!r} has no <output>")
        operations.append(OperationSignature(op_name, op_type, tuple(inputs), output_kind))

    if not operations:
        raise NoOperations(f"service {name!r} declares no operations")
    return ServiceDescription(name, service_type, attrs["endpoint"], attrs["binding"], tuple(operations))


def serialize_service_description(desc: ServiceDescription) -> bytes:
    parts = [
        f"<service name={_attr(desc.service_name)} type={_attr(str(desc.service_type))} "
        f"endpoint={_attr(desc.endpoint)} binding={_attr(desc.binding)}>"
    ]
    for op in desc.operations:
        parts.append(f"<operation name={_attr(op.name)} type={_attr(str(op.op_type))}>")
        parts.extend(f"<input name={_attr(p)} kind={_attr(k)}/>" for p, k in op.inputs)
        parts.append(f"<output kind={_attr(op.output_kind)}/></operation>")
    parts.append("</service>")
    return "".join(parts).encode("utf-8")


# --------------------------------------------------------------------------
# task organization documents


def _parse_binding(text: str) -> Binding:
    kind, sep, ref = text.partition(":")
    if not sep:
        raise MalformedDocument(f"binding {text!r} needs a request: or task: prefix")
    if kind == "request":
        return RequestRef(_name(ref, "request field"))
    if kind == "task":
        slot, dot, fld = ref.partition(".")
        return SlotRef(_name(slot, "slot reference"), _name(fld, "record field") if dot else None)
    raise MalformedDocument(f"unknown binding source {kind!r}")


def _format_binding(binding: Binding) -> str:
    if isinstance(binding, LiteralBinding):
        return f"value={_attr(binding.value)}"
    if isinstance(binding, RequestRef):
        return f"from={_attr('request:' + binding.field)}"
    ref = binding.slot if binding.field is None else f"{binding.slot}.{binding.field}"
    return f"from={_attr('task:' + ref)}"


def parse_task_document(document: bytes, taxonomy: OperationTaxonomy) -> TaskOrganizationDocument:
    root = _load_root(document, "taskdoc")
    request_type = _name(_attrs(root, ("request-type",))["request-type"], "request type")
    tasks: list[Task] = []
    earlier_slots: set[str] = set()
    all_slots = {}
    for task_el in _children(root, "task"):
        a = _attrs(task_el, ("id", "operation-type"), ("provider",))
        task_id = _name(a["id"], "task id")
        if any(t.task_id == task_id for t in tasks):
            raise DuplicateTaskId(task_id)
        op_type = _type_path(a["operation-type"], taxonomy)
        provider = _name(a["provider"], "provider name") if "provider" in a else None
        _no_text(task_el)
        inputs: list[tuple[str, Binding]] = []
        output_slot = None
        for child in task_el:
            if child.tag == "input":
                ia = _attrs(child, ("name",), ("from", "value"))
                param = _name(ia["name"], "input name")
                if ("from" in ia) == ("value" in ia):
                    raise MalformedDocument(f"input {param!r} needs exactly one of from= or value=")
                if any(p == param for p, _ in inputs):
                    raise MalformedDocument(f"input {param!r} bound twice in task {task_id!r}")
                if output_slot is not None:
                    raise MalformedDocument("<input> after <output>")
                binding = _parse_binding(ia["from"]) if "from" in ia else LiteralBinding(ia["value"])
                inputs.append((param, binding))
            elif child.tag == "output":
                if output_slot is not None:
                    raise MalformedDocument(f"task {task_id!r} declares two outputs")
                output_slot = _name(_attrs(child, ("slot",))["slot"], "output slot")
                _children(child, "-")
            else:
                raise MalformedDocument(f"unexpected <{child.tag}> inside <task>")
        if output_slot is None:
            raise MalformedDocument(f"task {task_id!r} has no <output>")
        if output_slot in RESERVED_SLOTS:
            raise MalformedDocument(f"output slot {output_slot!r} is reserved for the response envelope")
        if output_slot in all_slots:
            raise MalformedDocument(f"output slot {output_slot!r} used by two tasks")
        all_slots[output_slot] = task_id
        tasks.append(Task(task_id, op_type, tuple(inputs), output_slot, provider))

    for task in tasks:
        for param, binding in task.inputs:
            if isinstance(binding, SlotRef) and binding.slot not in earlier_slots:
                owner = all_slots.get(binding.slot)
                detail = f"written by later task {owner!r}" if owner else "never written"
                raise ForwardReference(
                    f"task {task.task_id!r} input {param!r} reads slot {binding.slot!r}, {detail}"
                )
        earlier_slots.add(task.output_slot)
    return TaskOrganizationDocument(request_type, tuple(tasks))


def serialize_task_document(doc: TaskOrganizationDocument) -> bytes:
    parts = [f"<taskdoc request-type={_attr(doc.request_type)}"]
    if not doc.tasks:
        parts.append("/>")
        return "".join(parts).encode("utf-8")
    parts.append(">")
    for task in doc.tasks:
        provider = "" if task.provider is None else f" provider={_attr(task.provider)}"
        parts.append(f"<task id={_attr(task.task_id)} operation-type={_attr(str(task.op_type))}{provider}>")
        parts.extend(f"<input name={_attr(p)} {_format_binding(b)}/>" for p, b in task.inputs)
        parts.append(f"<output slot={_attr(task.output_slot)}/></task>")
    parts.append("</taskdoc>")
    return "".join(parts).encode("utf-8")
