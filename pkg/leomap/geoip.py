"""GeoIP prefix feed ingestion and longest-prefix lookup.

Feed rows are ``prefix,country,region_code,city`` (an optional trailing comma
is tolerated).  IPv4 rows, which the operator publishes in the same feed, are
counted and skipped.
"""

from __future__ import annotations

import csv
import ipaddress
import logging
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, TextIO, Union

from .addressing import Ipv6Addr, Ipv6Prefix
from .continents import COUNTRY_TO_CONTINENT
from .errors import InputDataError

_COUNTRY_RE = re.compile(r"^[A-Z]{2}$")


class EmptyFeed(InputDataError, ValueError):
    def __init__(self, errors: list[tuple[int, str]]) -> None:
        super().__init__(f"GeoIP feed has no valid IPv6 rows ({len(errors)} rejected)")
        self.errors = errors


class UnknownCountry(InputDataError, KeyError):
    def __str__(self) -> str:
        return f"Unknown country code: {self.args[0]}"


@dataclass(frozen=True, order=True)
class GeoIpEntry:
    prefix: Ipv6Prefix
    country: str
    region_code: str
    city: str

    def __post_init__(self) -> None:
        if not _COUNTRY_RE.match(self.country):
            raise ValueError(f"Country must be two uppercase letters: {self.country!r}")

    def to_row(self) -> list[str]:
        return [str(self.prefix), self.country, self.region_code, self.city]


@dataclass
class GeoIpLoadResult:
    entries: list[GeoIpEntry]
    errors: list[tuple[int, str]] = field(default_factory=list)
    warnings: list[tuple[int, str]] = field(default_factory=list)
    skipped_ipv4: int = 0


def parse_geoip_row(fields: list[str]) -> Optional[GeoIpEntry]:
    """Parse one split row; returns None for IPv4 rows, raises ValueError when malformed."""
    if len(fields) == 5 and fields[4] == "":
        fields = fields[:4]
    if len(fields) != 4:
        raise ValueError(f"expected 4 columns, got {len(fields)}")
    prefix_text, country, region_code, city = (value.strip() for value in fields)
    network = ipaddress.ip_network(prefix_text, strict=True)
    if isinstance(network, ipaddress.IPv4Network):
        return None
    return GeoIpEntry(network, country, region_code, city)


def load_geoip(source: Union[TextIO, Iterable[str]]) -> GeoIpLoadResult:
    """Parse a feed; malformed rows are reported, duplicates keep the last row."""
    by_prefix: dict[Ipv6Prefix, GeoIpEntry] = {}
    result = GeoIpLoadResult(entries=[])
    for line_no, raw in enumerate(source, start=1):
        line = raw.lstrip("\ufeff").rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        try:
            fields = next(csv.reader([line]))
            entry = parse_geoip_row(fields)
        except (ValueError, StopIteration, csv.Error) as exc:
            result.errors.append((line_no, f"{exc}: {line!r}"))
            continue
        if entry is None:
            result.skipped_ipv4 += 1
            continue
        if entry.prefix in by_prefix:
            result.warnings.append((line_no, f"duplicate prefix {entry.prefix}; keeping last row"))
            del by_prefix[entry.prefix]
        by_prefix[entry.prefix] = entry
    for line_no, message in result.errors:
        logging.warning("GeoIP line %d rejected: %s", line_no, message)
    for line_no, message in result.warnings:
        logging.warning("GeoIP line %d: %s", line_no, message)
    if not by_prefix:
        raise EmptyFeed(result.errors)
    result.entries = list(by_prefix.values())
    logging.info(
        "Loaded %d GeoIP entries (%d rejected, %d IPv4 skipped)",
        len(result.entries),
        len(result.errors),
        result.skipped_ipv4,
    )
    return result


def dump_geoip(entries: Iterable[GeoIpEntry]) -> Iterator[str]:
    for entry in entries:
        yield ",".join(_csv_field(value) for value in entry.to_row())


def _csv_field(value: str) -> str:
    if any(ch in value for ch in ',"'):
        return '"' + value.replace('"', '""') + '"'
    return value


class _TrieNode:
    __slots__ = ("children", "entry")

    def __init__(self) -> None:
        self.children: list[Optional[_TrieNode]] = [None, None]
        self.entry: Optional[GeoIpEntry] = None


class GeoIndex:
    """Binary prefix trie over the feed; immutable once built."""

    def __init__(self, entries: Iterable[GeoIpEntry]) -> None:
        self._root = _TrieNode()
        self._size = 0
        for entry in entries:
            self._insert(entry)

    def __len__(self) -> int:
        return self._size

    def _insert(self, entry: GeoIpEntry) -> None:
        node = self._root
        value = int(entry.prefix.network_address)
        for depth in range(entry.prefix.prefixlen):
            bit = (value >> (127 - depth)) & 1
            child = node.children[bit]
            if child is None:
                child = node.children[bit] = _TrieNode()
            node = child
        if node.entry is None:
            self._size += 1
        node.entry = entry

    def lookup(self, addr: Ipv6Addr) -> Optional[GeoIpEntry]:
        node: Optional[_TrieNode] = self._root
        value = int(addr)
        best = self._root.entry
        depth = 0
        while node is not None and depth < 128:
            node = node.children[(value >> (127 - depth)) & 1]
            depth += 1
            if node is not None and node.entry is not None:
                best = node.entry
        return best

    def entries(self) -> list[GeoIpEntry]:
        found: list[GeoIpEntry] = []
        stack = [self._root]
        while stack:
            node = stack.pop()
            if node.entry is not None:
                found.append(node.entry)
            stack.extend(child for child in node.children if child is not None)
        return sorted(found)


def lookup(index: GeoIndex, addr: Ipv6Addr) -> Optional[GeoIpEntry]:
    return index.lookup(addr)


def continent_of(entry: GeoIpEntry) -> str:
    try:
        return COUNTRY_TO_CONTINENT[entry.country]
    except KeyError as exc:
        raise UnknownCountry(entry.country) from exc


def region_label(entry: GeoIpEntry) -> str:
    parts = [entry.city, entry.region_code.split("-", 1)[-1] if entry.region_code else "", entry.country]
    return ", ".join(part for part in parts if part)


def region_key(entry: GeoIpEntry) -> tuple[str, str, str]:
    """Region identity used by statistics: city qualified by region code and country."""
    return (entry.country, entry.region_code, entry.city)
