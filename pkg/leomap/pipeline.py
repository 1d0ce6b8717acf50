"""Stage composition: discovery, PoP association and backbone mapping."""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, Optional, Sequence

from .addressing import DEFAULT_ENUMERATION_CAP, Ipv6Addr, Ipv6Prefix, USER_DELEGATION_LEN
from .backbone.cluster import DEFAULT_CLUSTER_THRESHOLD_MS, cluster_unresolved
from .backbone.graph import DEFAULT_MIN_EVIDENCE, BackboneGraph, coverage_report, infer_edges
from .backbone.routers import (
    BackboneRouter,
    Unreachable,
    attribute_from_ptr,
    collect_candidates,
    latency_from_traces,
    latency_matrix,
)
from .config import ProbePolicy
from .discovery.dataset import UserRecord
from .discovery.scan import AssociationResult, ScanSummary, associate_pops, scan_allocations
from .errors import UsageError
from .geoip import GeoIpEntry
from .probe.base import ProbeAdapter, ProbeOp, TracerouteResult
from .probe.orchestrator import DEFAULT_MAX_TTL, run_batch
from .utils import Clock, utc_now


@dataclass
class DiscoveryResult:
    records: list[UserRecord]
    scan: ScanSummary
    association: Optional[AssociationResult] = None


def discover_users(
    entries: Sequence[GeoIpEntry],
    adapter: ProbeAdapter,
    policy: ProbePolicy,
    *,
    target_len: int = USER_DELEGATION_LEN,
    cap: int = DEFAULT_ENUMERATION_CAP,
    blocklist: Sequence[Ipv6Prefix] = (),
    seed: int = 0,
    clock: Clock = utc_now,
    associate: bool = True,
) -> DiscoveryResult:
    summary = ScanSummary()
    records = list(
        scan_allocations(
            entries,
            adapter,
            policy,
            target_len,
            cap=cap,
            blocklist=blocklist,
            seed=seed,
            clock=clock,
            summary=summary,
        )
    )
    logging.info(
        "Scan complete: %d allocations, %d candidates, %d active users",
        len(summary.allocations),
        summary.candidates,
        len(records),
    )
    result = DiscoveryResult(records=records, scan=summary)
    if associate:
        result.association = associate_pops(records, adapter, policy, blocklist=blocklist, seed=seed)
        result.records = result.association.records
    return result


def select_targets(records: Iterable[UserRecord], targets_per_pop: Optional[int] = None) -> list[Ipv6Addr]:
    """User addresses to traceroute, optionally capped per home PoP (lowest addresses first)."""
    grouped: Dict[str, list[Ipv6Addr]] = defaultdict(list)
    for record in records:
        grouped[record.home_pop.code if record.home_pop else ""].append(record.addr)
    targets: list[Ipv6Addr] = []
    for pop in sorted(grouped):
        addrs = sorted(grouped[pop])
        targets.extend(addrs if targets_per_pop is None else addrs[:targets_per_pop])
    return sorted(targets)


def trace_all(
    adapters: Sequence[ProbeAdapter],
    targets: Sequence[Ipv6Addr],
    policy: ProbePolicy,
    *,
    max_ttl: int = DEFAULT_MAX_TTL,
    blocklist: Sequence[Ipv6Prefix] = (),
    seed: int = 0,
) -> Dict[str, Dict[Ipv6Addr, TracerouteResult]]:
    """Traceroute every target from every vantage; keyed by vantage then target."""
    traces: Dict[str, Dict[Ipv6Addr, TracerouteResult]] = {}
    for adapter in adapters:
        found: Dict[Ipv6Addr, TracerouteResult] = {}
        for outcome in run_batch(
            adapter, targets, ProbeOp.TRACEROUTE, policy, blocklist=blocklist, seed=seed, max_ttl=max_ttl
        ):
            if outcome.ok:
                found[outcome.target] = outcome.value
        traces[adapter.vantage] = found
        reached = sum(1 for trace in found.values() if trace.reached)
        logging.info("Vantage %s: %d/%d traceroutes reached their target", adapter.vantage, reached, len(targets))
    return traces


@dataclass
class MapResult:
    routers: list[BackboneRouter]
    graph: BackboneGraph
    coverage: Dict[str, Any]
    user_traces: Dict[str, Dict[Ipv6Addr, TracerouteResult]] = field(default_factory=dict)
    direct_traces: Dict[str, Dict[Ipv6Addr, TracerouteResult]] = field(default_factory=dict)

    def router_document(self) -> Dict[str, Any]:
        return {"routers": [router.to_dict() for router in sorted(self.routers, key=lambda r: r.addr)]}


def _flatten(traces: Dict[str, Dict[Ipv6Addr, TracerouteResult]]) -> list[TracerouteResult]:
    return [traces[vantage][target] for vantage in sorted(traces) for target in sorted(traces[vantage])]


def map_backbone(
    records: Sequence[UserRecord],
    adapters: Sequence[ProbeAdapter],
    policy: ProbePolicy,
    *,
    vantage_pops: Sequence[str] = (),
    min_evidence: int = DEFAULT_MIN_EVIDENCE,
    cluster_threshold_ms: float = DEFAULT_CLUSTER_THRESHOLD_MS,
    targets_per_pop: Optional[int] = None,
    max_ttl: int = DEFAULT_MAX_TTL,
    blocklist: Sequence[Ipv6Prefix] = (),
    seed: int = 0,
) -> MapResult:
    """Traceroute users from every vantage and build the PoP-level backbone graph."""
    if not adapters:
        raise UsageError("Backbone mapping needs at least one vantage")
    targets = select_targets(records, targets_per_pop)
    logging.info("Tracing %d users from %d vantages", len(targets), len(adapters))
    user_traces = trace_all(adapters, targets, policy, max_ttl=max_ttl, blocklist=blocklist, seed=seed)
    flat = _flatten(user_traces)

    evidence, _ = collect_candidates(flat)
    candidates = sorted(evidence)
    logging.info("Found %d backbone router candidates", len(candidates))

    names = {
        outcome.target: outcome.value if outcome.ok else None
        for outcome in run_batch(adapters[0], candidates, ProbeOp.PTR, policy, blocklist=blocklist, seed=seed)
    }
    attributed = [attribute_from_ptr(addr, names.get(addr), evidence[addr]) for addr in candidates]

    direct = trace_all(adapters, candidates, policy, max_ttl=max_ttl, blocklist=blocklist, seed=seed)
    matrix = latency_matrix(candidates, direct)
    routers = cluster_unresolved(attributed, matrix, cluster_threshold_ms)
    router_pops = {router.addr: router.pop.code for router in routers if router.pop is not None}

    def measure(vantage: str, a: Ipv6Addr, b: Ipv6Addr) -> Optional[float]:
        traces = direct.get(vantage, {})
        trace_a, trace_b = traces.get(a), traces.get(b)
        if trace_a is None or trace_b is None:
            return None
        try:
            return latency_from_traces(trace_a, trace_b)
        except Unreachable:
            return None

    graph = infer_edges(flat, router_pops, min_evidence=min_evidence, measure=measure)
    expected = {record.home_pop.code for record in records if record.home_pop is not None}
    coverage = coverage_report(graph, vantage_pops, expected)
    return MapResult(routers, graph, coverage, user_traces, direct)
