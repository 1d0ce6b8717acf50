"""Active user discovery and PoP association."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

from ..addressing import (
    DEFAULT_ENUMERATION_CAP,
    Ipv6Addr,
    Ipv6Prefix,
    PrefixTooShort,
    USER_DELEGATION_LEN,
    WrongPrefixLength,
    generate_candidates,
    is_user_router_address,
)
from ..config import ProbePolicy
from ..geoip import GeoIndex, GeoIpEntry
from ..probe.base import BatchSummary, ProbeAdapter, ProbeOp
from ..probe.orchestrator import run_batch
from ..ptrmap import PtrKind, parse_ptr
from ..utils import Clock, utc_now
from .dataset import UserRecord

DIAG_HOMED = "homed"
DIAG_NO_PTR = "no-ptr"
DIAG_FOREIGN_PTR = "foreign-ptr"
DIAG_NON_CUSTOMER_PTR = "non-customer-ptr"


@dataclass
class AllocationScan:
    entry: GeoIpEntry
    candidates: int = 0
    alive: int = 0
    # answered but not a user router address
    off_pattern: int = 0
    error: Optional[str] = None


@dataclass
class ScanSummary:
    allocations: list[AllocationScan] = field(default_factory=list)
    blocked: int = 0
    probe_errors: int = 0

    @property
    def candidates(self) -> int:
        return sum(item.candidates for item in self.allocations)

    @property
    def alive(self) -> int:
        return sum(item.alive for item in self.allocations)

    @property
    def off_pattern(self) -> int:
        return sum(item.off_pattern for item in self.allocations)

    @property
    def failed(self) -> list[AllocationScan]:
        return [item for item in self.allocations if item.error is not None]


def scan_allocations(
    entries: Sequence[GeoIpEntry],
    adapter: ProbeAdapter,
    policy: ProbePolicy,
    target_len: int = USER_DELEGATION_LEN,
    *,
    cap: int = DEFAULT_ENUMERATION_CAP,
    blocklist: Sequence[Ipv6Prefix] = (),
    seed: int = 0,
    clock: Clock = utc_now,
    summary: Optional[ScanSummary] = None,
) -> Iterator[UserRecord]:
    """Echo-probe every candidate of every allocation; yield the ones that answer.

    An allocation that cannot be enumerated is logged and skipped; the rest of
    the run proceeds.  Records of one allocation come out sorted by address,
    and an address under nested allocations is reported once, by the most
    specific one.
    """
    if not entries:
        raise ValueError("scan_allocations needs at least one GeoIP entry")
    summary = summary if summary is not None else ScanSummary()
    index = GeoIndex(entries)
    for entry in entries:
        report = AllocationScan(entry)
        summary.allocations.append(report)
        try:
            candidates = generate_candidates(entry.prefix, target_len, cap=cap)
        except (PrefixTooShort, WrongPrefixLength) as exc:
            report.error = str(exc)
            logging.warning("Allocation %s skipped: %s", entry.prefix, exc)
            continue
        report.candidates = 1 << (target_len - entry.prefix.prefixlen)

        batch = BatchSummary()
        alive = []
        for outcome in run_batch(
            adapter, candidates, ProbeOp.ECHO, policy, blocklist=blocklist, seed=seed, summary=batch
        ):
            if not (outcome.ok and outcome.value):
                continue
            if not is_user_router_address(outcome.target):
                report.off_pattern += 1
                continue
            # nested allocations: the most specific entry owns the address
            if index.lookup(outcome.target) == entry:
                alive.append(outcome.target)
        summary.blocked += batch.blocked
        summary.probe_errors += batch.errors
        if report.off_pattern:
            logging.info(
                "Allocation %s: %d answering candidates dropped, not user router addresses",
                entry.prefix,
                report.off_pattern,
            )

        stamp = clock()
        for addr in sorted(alive):
            yield UserRecord(addr=addr, geo=entry, home_pop=None, discovered_at=stamp)
        report.alive = len(alive)
        logging.info(
            "Allocation %s (%s): %d candidates, %d alive",
            entry.prefix,
            entry.city or entry.country,
            report.candidates,
            report.alive,
        )


def ptr_diagnostic(ptr_name: Optional[str]) -> str:
    if ptr_name is None:
        return DIAG_NO_PTR
    kind = parse_ptr(ptr_name).kind
    if kind is PtrKind.CUSTOMER:
        return DIAG_HOMED
    if kind is PtrKind.POP_HOST:
        return DIAG_NON_CUSTOMER_PTR
    return DIAG_FOREIGN_PTR


@dataclass
class AssociationResult:
    records: list[UserRecord]
    diagnostics: Counter = field(default_factory=Counter)

    @property
    def homed(self) -> int:
        return self.diagnostics[DIAG_HOMED]


def associate_pops(
    records: Iterable[UserRecord],
    adapter: ProbeAdapter,
    policy: ProbePolicy,
    *,
    blocklist: Sequence[Ipv6Prefix] = (),
    seed: int = 0,
) -> AssociationResult:
    """Resolve each record's PTR and set its home PoP from customer names."""
    by_addr = {record.addr: record for record in records}
    result = AssociationResult(records=[])
    answers = {
        outcome.target: outcome
        for outcome in run_batch(
            adapter, list(by_addr), ProbeOp.PTR, policy, blocklist=blocklist, seed=seed
        )
    }
    for addr in sorted(by_addr):
        outcome = answers.get(addr)
        name = outcome.value if outcome is not None and outcome.ok else None
        updated = by_addr[addr].with_ptr(name)
        result.diagnostics[ptr_diagnostic(name)] += 1
        result.records.append(updated)
    logging.info(
        "PoP association: %d records, %s",
        len(result.records),
        ", ".join(f"{key}={value}" for key, value in sorted(result.diagnostics.items())) or "none",
    )
    return result


def scan_targets(
    targets: Iterable[Ipv6Addr],
    index: GeoIndex,
    adapter: ProbeAdapter,
    policy: ProbePolicy,
    *,
    blocklist: Sequence[Ipv6Prefix] = (),
    seed: int = 0,
    clock: Clock = utc_now,
    summary: Optional[ScanSummary] = None,
) -> list[UserRecord]:
    """Echo-probe an explicit candidate list, tagging answers with their GeoIP entry."""
    summary = summary if summary is not None else ScanSummary()
    mapped: list[Ipv6Addr] = []
    unmapped = 0
    for addr in targets:
        if index.lookup(addr) is None or not is_user_router_address(addr):
            unmapped += 1
            continue
        mapped.append(addr)
    if unmapped:
        logging.warning("%d candidates skipped: no GeoIP entry or not a user router address", unmapped)

    batch = BatchSummary()
    alive = sorted(
        outcome.target
        for outcome in run_batch(
            adapter, mapped, ProbeOp.ECHO, policy, blocklist=blocklist, seed=seed, summary=batch
        )
        if outcome.ok and outcome.value
    )
    summary.blocked += batch.blocked
    summary.probe_errors += batch.errors

    stamp = clock()
    records = []
    per_entry: dict[GeoIpEntry, AllocationScan] = {}
    for addr in mapped:
        entry = index.lookup(addr)
        per_entry.setdefault(entry, AllocationScan(entry)).candidates += 1
    for addr in alive:
        entry = index.lookup(addr)
        per_entry[entry].alive += 1
        records.append(UserRecord(addr=addr, geo=entry, home_pop=None, discovered_at=stamp))
    summary.allocations.extend(per_entry[entry] for entry in sorted(per_entry))
    for report in summary.allocations:
        logging.info(
            "Allocation %s (%s): %d candidates, %d alive",
            report.entry.prefix,
            report.entry.city or report.entry.country,
            report.candidates,
            report.alive,
        )
    return records
