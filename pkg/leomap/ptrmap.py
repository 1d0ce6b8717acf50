"""Reverse-DNS names and the operator's PTR grammar.

Customer routers resolve to ``customer.<pop>.pop.starlinkisp.net``; other
hosts inside a PoP zone (backbone routers, optionally gateways) resolve to
``<label>.<pop>.pop.starlinkisp.net``.  Everything here is string logic; the
actual lookups go through a probe adapter.
"""

from __future__ import annotations

import enum
import ipaddress
import re
from dataclasses import dataclass
from typing import Optional, Union

from .addressing import Ipv6Addr
from .errors import InputDataError

POP_ZONE = "pop.starlinkisp.net"
CUSTOMER_LABEL = "customer"

_POP_CODE_RE = re.compile(r"^([a-z]+)([1-9][0-9]*)$")
_LABEL_RE = re.compile(r"^[a-z0-9](?:[a-z0-9-]{0,61}[a-z0-9])?$")
_REVERSE_SUFFIX = ".ip6.arpa"


class MalformedPopCode(InputDataError, ValueError):
    pass


@dataclass(frozen=True, order=True)
class PopId:
    code: str
    site: str
    index: int

    def __str__(self) -> str:
        return self.code


class PtrKind(str, enum.Enum):
    CUSTOMER = "customer"
    POP_HOST = "pop_host"
    NOT_STARLINK = "not_starlink"


@dataclass(frozen=True)
class PtrClassification:
    kind: PtrKind
    pop: Optional[PopId] = None
    label: Optional[str] = None


NOT_STARLINK = PtrClassification(PtrKind.NOT_STARLINK)


def parse_pop_code(code: str) -> PopId:
    text = code.strip().lower()
    match = _POP_CODE_RE.match(text)
    if match is None or len(match.group(1)) < 4:
        raise MalformedPopCode(f"Malformed PoP code: {code!r}")
    return PopId(code=text, site=match.group(1), index=int(match.group(2)))


def reverse_name(addr: Ipv6Addr) -> str:
    return addr.reverse_pointer


def address_from_reverse_name(name: str) -> Ipv6Addr:
    text = name.strip().lower().rstrip(".")
    if not text.endswith(_REVERSE_SUFFIX):
        raise ValueError(f"Not an ip6.arpa name: {name!r}")
    nibbles = text[: -len(_REVERSE_SUFFIX)].split(".")
    if len(nibbles) != 32 or any(len(n) != 1 or n not in "0123456789abcdef" for n in nibbles):
        raise ValueError(f"Expected 32 hex nibbles: {name!r}")
    return ipaddress.IPv6Address(int("".join(reversed(nibbles)), 16))


def format_customer_ptr(pop: PopId) -> str:
    return f"{CUSTOMER_LABEL}.{pop.code}.{POP_ZONE}"


def format_pophost_ptr(label: str, pop: PopId) -> str:
    if not _LABEL_RE.match(label) or label == CUSTOMER_LABEL:
        raise ValueError(f"Invalid PoP host label: {label!r}")
    return f"{label}.{pop.code}.{POP_ZONE}"


def parse_ptr(name: Union[str, bytes, None]) -> PtrClassification:
    """Classify a PTR target name; total over arbitrary input."""
    if name is None:
        return NOT_STARLINK
    if isinstance(name, bytes):
        name = name.decode("ascii", errors="replace")
    if not isinstance(name, str):
        return NOT_STARLINK
    text = name.strip().lower()
    if text.endswith("."):
        text = text[:-1]
    labels = text.split(".")
    if len(labels) != 5 or ".".join(labels[2:]) != POP_ZONE:
        return NOT_STARLINK
    host, pop_code = labels[0], labels[1]
    if not _LABEL_RE.match(host):
        return NOT_STARLINK
    try:
        pop = parse_pop_code(pop_code)
    except MalformedPopCode:
        return NOT_STARLINK
    if pop.code != pop_code:
        return NOT_STARLINK
    if host == CUSTOMER_LABEL:
        return PtrClassification(PtrKind.CUSTOMER, pop=pop)
    return PtrClassification(PtrKind.POP_HOST, pop=pop, label=host)
