"""Broker and client-application gateway.

The broker turns client payloads (urlencoded, XML or JSON) into a
`NormalizedRequest` and renders a `NormalizedResponse` back into the
client's format. Normalized parameters are text: JSON numbers and booleans
are reduced to their canonical spelling so that the three formats agree,
and typing happens later against the operation signature.
"""

from __future__ import annotations

import json
import re
import xml.etree.ElementTree as ET
from enum import Enum
from typing import Mapping, Optional
from urllib.parse import parse_qsl, urlencode
from xml.sax.saxutils import escape

from .errors import MalformedPayload, MissingRequestType, MwscmError
from .model import NormalizedRequest, NormalizedResponse, Scalar, Value, format_scalar

_KEY_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_.-]*$")
# characters XML 1.0 cannot carry at all, even escaped
_XML_ILLEGAL = re.compile("[\x00-\x08\x0b\x0c\x0e-\x1f\ufffe\uffff]")
_ATTR_ESCAPES = {'"': "&quot;", "\n": "&#10;", "\r": "&#13;", "\t": "&#9;"}


class ClientFormat(str, Enum):
    URLENCODED = "urlencoded"
    XML = "xml"
    JSON = "json"

    @classmethod
    def parse(cls, tag: "str | ClientFormat") -> "ClientFormat":
        try:
            return cls(tag)
        except ValueError:
            raise MalformedPayload(f"unknown client format {tag!r}") from None


def _text(value: object) -> str:
    if isinstance(value, (bool, int, float, str)):
        return format_scalar(value)
    raise MalformedPayload(f"parameter values must be scalars, got {type(value).__name__}")


def _build(fields: list[tuple[str, object]], fmt: ClientFormat) -> NormalizedRequest:
    params: dict[str, Scalar] = {}
    request_type: Optional[str] = None
    for key, value in fields:
        if not _KEY_RE.match(key):
            raise MalformedPayload(f"invalid field name {key!r}")
        if key == "type":
            if request_type is not None:
                raise MalformedPayload("duplicate type field")
            request_type = _text(value)
            continue
        if key in params:
            raise MalformedPayload(f"duplicate field {key!r}")
        params[key] = _text(value)
    if not request_type:
        raise MissingRequestType("payload has no type field")
    return NormalizedRequest(request_type, params, fmt.value)


def normalize(raw: bytes, fmt: "str | ClientFormat") -> NormalizedRequest:
    fmt = ClientFormat.parse(fmt)
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedPayload("payload is not UTF-8") from exc

    if fmt is ClientFormat.URLENCODED:
        try:
            fields: list[tuple[str, object]] = list(
                parse_qsl(text, keep_blank_values=True, strict_parsing=bool(text), errors="strict")
            )
        except (ValueError, UnicodeDecodeError) as exc:
            raise MalformedPayload(str(exc)) from exc
        return _build(fields, fmt)

    if fmt is ClientFormat.JSON:
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise MalformedPayload(str(exc)) from exc
        if not isinstance(obj, dict):
            raise MalformedPayload("JSON request must be an object")
        return _build(list(obj.items()), fmt)

    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise MalformedPayload(str(exc)) from exc
    if root.tag != "request" or len(root) or (root.text and root.text.strip()):
        raise MalformedPayload("XML request must be a single empty <request/> element")
    return _build(list(root.attrib.items()), fmt)


def format_request(req: NormalizedRequest, fmt: "str | ClientFormat") -> bytes:
    """Inverse of `normalize`; used by clients and round-trip tests."""
    fmt = ClientFormat.parse(fmt)
    fields = {"type": req.request_type, **{k: format_scalar(v) for k, v in req.params.items()}}
    return _encode_flat(dict(sorted(fields.items())), fmt, "request")


def _flatten(results: Mapping[str, Value]) -> dict[str, str]:
    flat: dict[str, str] = {}
    for slot, value in results.items():
        if isinstance(value, dict):
            for field, inner in value.items():
                flat[f"{slot}.{field}"] = format_scalar(inner)
        else:
            flat[slot] = format_scalar(value)
    return flat


def _encode_flat(fields: Mapping[str, str], fmt: ClientFormat, tag: str) -> bytes:
    if fmt is ClientFormat.URLENCODED:
        return urlencode(list(fields.items())).encode("utf-8")
    if fmt is ClientFormat.JSON:
        return json.dumps(fields, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    for k, v in fields.items():
        if _XML_ILLEGAL.search(v):
            raise MalformedPayload(f"field {k!r} holds a character XML cannot represent")
    attrs = "".join(f' {k}="{escape(v, _ATTR_ESCAPES)}"' for k, v in fields.items())
    return f"<{tag}{attrs}/>".encode("utf-8")


def format_response(resp: NormalizedResponse, fmt: "str | ClientFormat") -> bytes:
    """Deterministic encoding: `status` first, then the other keys sorted.

    JSON keeps record results nested; urlencoded and XML flatten them to
    ``slot.field`` keys.
    """
    fmt = ClientFormat.parse(fmt)
    if resp.is_ok:
        if fmt is ClientFormat.JSON:
            body = {"status": "ok", **_sorted_deep(dict(resp.results))}
            return json.dumps(body, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
        fields = {"status": "ok", **dict(sorted(_flatten(resp.results).items()))}
    else:
        fields = {"status": "error", "code": resp.error_code or "Error"}
    return _encode_flat(fields, fmt, "response")


def _sorted_deep(value):
    if isinstance(value, dict):
        return {k: _sorted_deep(value[k]) for k in sorted(value)}
    return value


# --------------------------------------------------------------------------
# client application gateway


class ClientGateway:
    """The client-application entry point: steps 1-3 and 18-20 around the task manager."""

    def __init__(self, mediator) -> None:
        self.mediator = mediator

    def submit(self, raw: bytes, fmt: "str | ClientFormat"):
        """Handle one client payload; returns (encoded response, response, trace)."""
        from .mediator import RequestTrace

        now = self.mediator.net.now
        trace = RequestTrace()
        trace.add(1, now())
        trace.add(2, now())
        try:
            fmt = ClientFormat.parse(fmt)
            req = normalize(raw, fmt)
            trace.add(3, now())
            response, _ = self.mediator.handle_request(req, trace)
        except MwscmError as exc:
            response = NormalizedResponse.error(exc.code)
            if not isinstance(fmt, ClientFormat):
                fmt = ClientFormat.JSON
        trace.add(18, now())
        body = format_response(response, fmt)
        trace.add(19, now())
        trace.add(20, now())
        return body, response, trace
