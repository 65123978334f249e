"""Line-based wire formats: advertisements, description fetches and CALL invocations.

Advertisements are one `|`-separated line per datagram with no escaping;
every field is restricted to `[a-z0-9/:._-]`. CALL and result lines carry
`key=value` pairs whose values are percent-encoded.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Optional, Union
from urllib.parse import quote, unquote

from .model import Scalar, TypePath, format_scalar
from .transport.base import Endpoint

GETDESC = b"GETDESC"
_FIELD_RE = re.compile(r"^[A-Za-z0-9/:._-]+$")
_KEY_RE = re.compile(r"^[A-Za-z0-9_.-]+$")


class WireError(ValueError):
    """A line that does not follow the protocol grammar."""


@dataclass(frozen=True)
class Advertisement:
    service_name: str
    service_type: TypePath
    endpoint: Endpoint
    ttl_s: int
    seq: int

    def __post_init__(self) -> None:
        if self.ttl_s < 1:
            raise ValueError("ttl_s must be >= 1")


@dataclass(frozen=True)
class Withdrawal:
    service_name: str
    seq: int


Announcement = Union[Advertisement, Withdrawal]


def _check_field(value: str) -> str:
    if not _FIELD_RE.match(value):
        raise WireError(f"field {value!r} is not wire-safe")
    return value


def encode_announcement(msg: Announcement) -> bytes:
    if isinstance(msg, Advertisement):
        fields = ["ADVERTISE", msg.service_name, str(msg.service_type), str(msg.endpoint), str(msg.ttl_s), str(msg.seq)]
    else:
        fields = ["WITHDRAW", msg.service_name, str(msg.seq)]
    return "|".join(_check_field(f) for f in fields).encode("utf-8")


def _int_field(text: str) -> int:
    if not text.isdigit():
        raise WireError(f"expected a non-negative integer, got {text!r}")
    return int(text)


def decode_announcement(payload: bytes) -> Announcement:
    try:
        line = payload.decode("utf-8").rstrip("\r\n")
    except UnicodeDecodeError as exc:
        raise WireError("announcement is not UTF-8") from exc
    fields = line.split("|")
    try:
        if fields[0] == "ADVERTISE" and len(fields) == 6:
            _, name, stype, endpoint, ttl, seq = fields
            return Advertisement(
                _check_field(name), TypePath.parse(stype), Endpoint.parse(endpoint), _int_field(ttl), _int_field(seq)
            )
        if fields[0] == "WITHDRAW" and len(fields) == 3:
            return Withdrawal(_check_field(fields[1]), _int_field(fields[2]))
    except WireError:
        raise
    except ValueError as exc:
        raise WireError(str(exc)) from exc
    raise WireError(f"unrecognized announcement {line!r}")


# -- description fetch -------------------------------------------------------


def encode_description_reply(document: Optional[bytes]) -> bytes:
    if document is None:
        return b"404"
    return b"200\n\n" + document


def decode_description_reply(payload: bytes) -> Optional[bytes]:
    """Return the description document, or None for a 404."""
    if payload.strip() == b"404":
        return None
    head, sep, body = payload.partition(b"\n\n")
    if head != b"200" or not sep:
        raise WireError("malformed GETDESC reply")
    return body


# -- CALL --------------------------------------------------------------------


def _pairs(values: Mapping[str, Scalar]) -> list[str]:
    lines = []
    for key, value in values.items():
        if not _KEY_RE.match(key):
            raise WireError(f"key {key!r} is not wire-safe")
        lines.append(f"{key}={quote(format_scalar(value), safe='')}")
    return lines


def _parse_pairs(lines: list[str]) -> dict[str, str]:
    out: dict[str, str] = {}
    for line in lines:
        key, sep, value = line.partition("=")
        if not sep or not _KEY_RE.match(key) or key in out:
            raise WireError(f"bad key=value line {line!r}")
        out[key] = unquote(value)
    return out


def encode_call(operation: str, args: Mapping[str, Scalar]) -> bytes:
    return "\n".join([f"CALL {operation}", *_pairs(args), "", ""]).encode("utf-8")


def decode_call(payload: bytes) -> tuple[str, dict[str, str]]:
    try:
        text = payload.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise WireError("CALL is not UTF-8") from exc
    if not text.endswith("\n\n"):
        raise WireError("CALL must end with a blank line")
    lines = text[:-2].split("\n")
    verb, _, operation = lines[0].partition(" ")
    if verb != "CALL" or not operation:
        raise WireError(f"bad request line {lines[0]!r}")
    return operation, _parse_pairs([line for line in lines[1:]])


def encode_result(values: Mapping[str, Scalar]) -> bytes:
    return "\n".join(["200", *_pairs(values)]).encode("utf-8")


def encode_fault(code: str) -> bytes:
    return f"500\n{code}".encode("utf-8")


@dataclass(frozen=True)
class CallResult:
    ok: bool
    values: dict[str, str]
    fault: Optional[str] = None


def decode_result(payload: bytes) -> CallResult:
    try:
        lines = payload.decode("utf-8").split("\n")
    except UnicodeDecodeError as exc:
        raise WireError("result is not UTF-8") from exc
    status = lines[0]
    if status == "200":
        return CallResult(True, _parse_pairs([line for line in lines[1:] if line]))
    if status == "500" and len(lines) >= 2 and lines[1]:
        return CallResult(False, {}, lines[1])
    raise WireError(f"bad status line {status!r}")
