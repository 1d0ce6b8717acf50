"""Active user dataset: the UserRecord type and its line-oriented file format.

Layout: a ``#leomap-users v1`` header, then one CSV line per record with
``addr,prefix,country,region_code,city,home_pop,discovered_at,ptr_name``.
Empty fields mean "unset".  Files may be appended to; on load the last line
for an address wins.
"""

from __future__ import annotations

import csv
import io
import ipaddress
import logging
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path
from typing import Iterable, Optional

from ..addressing import Ipv6Addr, is_user_router_address
from ..errors import InputDataError
from ..geoip import GeoIpEntry
from ..ptrmap import PopId, PtrKind, parse_pop_code, parse_ptr
from ..utils import format_utc, parse_utc

SCHEMA_NAME = "leomap-users"
SCHEMA_VERSION = "v1"
HEADER = f"#{SCHEMA_NAME} {SCHEMA_VERSION}"
FIELDS = ("addr", "prefix", "country", "region_code", "city", "home_pop", "discovered_at", "ptr_name")


class SchemaMismatch(InputDataError, ValueError):
    pass


@dataclass(frozen=True)
class CorruptLine:
    line_no: int
    text: str
    reason: str


@dataclass(frozen=True)
class UserRecord:
    addr: Ipv6Addr
    geo: GeoIpEntry
    home_pop: Optional[PopId]
    discovered_at: datetime
    ptr_name: Optional[str] = None

    def __post_init__(self) -> None:
        if not is_user_router_address(self.addr):
            raise ValueError(f"{self.addr} does not match the user router pattern")
        if self.addr not in self.geo.prefix:
            raise ValueError(f"{self.addr} lies outside {self.geo.prefix}")
        parsed = parse_ptr(self.ptr_name)
        customer_pop = parsed.pop if parsed.kind is PtrKind.CUSTOMER else None
        if self.home_pop != customer_pop:
            raise ValueError(
                f"{self.addr}: home PoP {self.home_pop} disagrees with PTR {self.ptr_name!r}"
            )

    def with_ptr(self, ptr_name: Optional[str]) -> "UserRecord":
        parsed = parse_ptr(ptr_name)
        home = parsed.pop if parsed.kind is PtrKind.CUSTOMER else None
        return replace(self, ptr_name=ptr_name, home_pop=home)

    def to_row(self) -> list[str]:
        return [
            str(self.addr),
            str(self.geo.prefix),
            self.geo.country,
            self.geo.region_code,
            self.geo.city,
            self.home_pop.code if self.home_pop else "",
            format_utc(self.discovered_at),
            self.ptr_name or "",
        ]


@dataclass
class DatasetLoad:
    records: list[UserRecord]
    corrupt: list[CorruptLine] = field(default_factory=list)
    duplicates: int = 0


def record_from_row(row: list[str]) -> UserRecord:
    if len(row) != len(FIELDS):
        raise ValueError(f"expected {len(FIELDS)} fields, got {len(row)}")
    addr, prefix, country, region_code, city, home_pop, discovered_at, ptr_name = row
    return UserRecord(
        addr=ipaddress.IPv6Address(addr),
        geo=GeoIpEntry(ipaddress.IPv6Network(prefix, strict=True), country, region_code, city),
        home_pop=parse_pop_code(home_pop) if home_pop else None,
        discovered_at=parse_utc(discovered_at),
        ptr_name=ptr_name or None,
    )


def format_record(record: UserRecord) -> str:
    buffer = io.StringIO()
    csv.writer(buffer, lineterminator="").writerow(record.to_row())
    return buffer.getvalue()


def _check_header(line: str, path: Path) -> None:
    text = line.strip().lstrip("\ufeff")
    parts = text.lstrip("#").split()
    if not text.startswith("#") or len(parts) != 2 or parts[0] != SCHEMA_NAME:
        raise SchemaMismatch(f"{path}: missing '{HEADER}' header")
    if parts[1] != SCHEMA_VERSION:
        raise SchemaMismatch(f"{path}: dataset version {parts[1]}, reader expects {SCHEMA_VERSION}")


def persist(path: Path, records: Iterable[UserRecord], *, append: bool = False) -> int:
    """Write records sorted by address; ``append`` adds to an existing dataset."""
    ordered = sorted(records, key=lambda record: record.addr)
    if append and path.exists() and path.stat().st_size > 0:
        with path.open(encoding="utf-8") as handle:
            _check_header(handle.readline(), path)
        with path.open("a", encoding="utf-8", newline="\n") as handle:
            for record in ordered:
                handle.write(format_record(record) + "\n")
        return len(ordered)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        handle.write(HEADER + "\n")
        for record in ordered:
            handle.write(format_record(record) + "\n")
    return len(ordered)


def load_dataset(path: Path) -> DatasetLoad:
    """Read a dataset; corrupt lines are reported and skipped, the last line per address wins."""
    by_addr: dict[Ipv6Addr, UserRecord] = {}
    result = DatasetLoad(records=[])
    with path.open(encoding="utf-8", newline="") as handle:
        first = handle.readline()
        if not first:
            return result
        _check_header(first, path)
        for line_no, raw in enumerate(handle, start=2):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            try:
                record = record_from_row(next(csv.reader([line])))
            except (ValueError, StopIteration, csv.Error) as exc:
                result.corrupt.append(CorruptLine(line_no, line, str(exc)))
                continue
            if record.addr in by_addr:
                result.duplicates += 1
            by_addr[record.addr] = record
    for corrupt in result.corrupt:
        logging.warning("%s:%d skipped: %s", path, corrupt.line_no, corrupt.reason)
    result.records = sorted(by_addr.values(), key=lambda record: record.addr)
    logging.info(
        "Loaded %d user records from %s (%d corrupt, %d superseded)",
        len(result.records),
        path,
        len(result.corrupt),
        result.duplicates,
    )
    return result
