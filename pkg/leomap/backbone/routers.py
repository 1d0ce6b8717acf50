"""Backbone router identification, PTR attribution and latency measurement.

The router serving a traceroute target sits three hops before the end of the
path (target, target gateway, backbone router).  Intermediate hops of
label-switched paths report inflated RTTs, so router-to-router latency is
derived from direct traceroutes to each router, whose final hop is not
inflated.
"""

from __future__ import annotations

import enum
import logging
from collections import defaultdict
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from ..addressing import Ipv6Addr
from ..config import ProbePolicy
from ..errors import InputDataError, LeomapError
from ..probe.base import ProbeAdapter, TracerouteResult
from ..probe.orchestrator import DEFAULT_MAX_TTL
from ..ptrmap import PopId, PtrKind, parse_ptr

# vantage name -> router address -> direct traceroute
DirectTraces = Mapping[str, Mapping[Ipv6Addr, TracerouteResult]]


class NotReached(InputDataError, ValueError):
    pass


class Unreachable(LeomapError, RuntimeError):
    def __init__(self, addr: Ipv6Addr) -> None:
        super().__init__(f"Router {addr} did not answer a direct traceroute")
        self.addr = addr


class Attribution(str, enum.Enum):
    PTR = "ptr"
    LATENCY_CLUSTER = "latency_cluster"
    UNRESOLVED = "unresolved"


@dataclass(frozen=True)
class BackboneRouter:
    addr: Ipv6Addr
    pop: Optional[PopId] = None
    attribution: Attribution = Attribution.UNRESOLVED
    evidence: tuple[str, ...] = ()
    ptr_name: Optional[str] = None
    cluster: Optional[str] = None
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.attribution is Attribution.PTR and self.pop is None:
            raise ValueError(f"{self.addr}: PTR attribution needs a PoP")
        if self.attribution is Attribution.UNRESOLVED and self.pop is not None:
            raise ValueError(f"{self.addr}: unresolved router cannot carry a PoP")

    @property
    def label(self) -> Optional[str]:
        return self.pop.code if self.pop is not None else self.cluster

    def to_dict(self) -> dict:
        return {
            "addr": str(self.addr),
            "pop": self.pop.code if self.pop is not None else None,
            "attribution": self.attribution.value,
            "cluster": self.cluster,
            "ptr_name": self.ptr_name,
            "flags": list(self.flags),
            "evidence": len(self.evidence),
        }


def trace_id(trace: TracerouteResult) -> str:
    return f"{trace.vantage or '-'}>{trace.target}"


def extract_backbone_router(trace: TracerouteResult) -> Optional[Ipv6Addr]:
    """Third-to-last responder of a reached trace, None if absent or too short."""
    if not trace.reached:
        raise NotReached(f"Traceroute to {trace.target} did not reach its target")
    if len(trace.hops) < 3:
        return None
    return trace.hops[-3].responder


def candidate_routers(trace: TracerouteResult) -> list[Ipv6Addr]:
    """Backbone hops of a reached user trace: everything between the first hop and the last two."""
    if not trace.reached or len(trace.hops) < 3:
        return []
    return [hop.responder for hop in trace.hops[1:-2] if hop.responder is not None]


def collect_candidates(traces: Sequence[TracerouteResult]) -> tuple[dict[Ipv6Addr, list[str]], int]:
    """Candidate routers with their source traces, plus the count of anonymous third-to-last hops."""
    evidence: dict[Ipv6Addr, list[str]] = defaultdict(list)
    anonymous = 0
    for trace in traces:
        if not trace.reached:
            continue
        if extract_backbone_router(trace) is None:
            anonymous += 1
        for addr in candidate_routers(trace):
            evidence[addr].append(trace_id(trace))
    if anonymous:
        logging.warning("%d reached traces had an anonymous third-to-last hop", anonymous)
    return dict(evidence), anonymous


def attribute_from_ptr(
    addr: Ipv6Addr, ptr_name: Optional[str], evidence: Sequence[str] = ()
) -> BackboneRouter:
    parsed = parse_ptr(ptr_name)
    if parsed.kind is PtrKind.POP_HOST:
        return BackboneRouter(addr, parsed.pop, Attribution.PTR, tuple(evidence), ptr_name)
    if parsed.kind is PtrKind.CUSTOMER:
        logging.warning("Backbone candidate %s has a customer PTR %s", addr, ptr_name)
        flag = "customer-ptr"
    else:
        flag = "no-ptr" if ptr_name is None else "foreign-ptr"
    return BackboneRouter(addr, None, Attribution.UNRESOLVED, tuple(evidence), ptr_name, flags=(flag,))


def attribute_router(
    addr: Ipv6Addr,
    adapter: ProbeAdapter,
    policy: ProbePolicy,
    evidence: Sequence[str] = (),
) -> BackboneRouter:
    return attribute_from_ptr(addr, adapter.lookup_ptr(addr, policy).name, evidence)


def final_rtt(trace: TracerouteResult) -> float:
    samples = trace.final_samples()
    if not samples:
        raise Unreachable(trace.target)
    return float(np.median(samples))


def latency_from_traces(trace_a: TracerouteResult, trace_b: TracerouteResult) -> float:
    """One-way latency between two routers from their direct traces."""
    if trace_a.target == trace_b.target:
        return 0.0
    return abs(final_rtt(trace_b) - final_rtt(trace_a)) / 2.0


def measure_router_latency(
    a: Ipv6Addr,
    b: Ipv6Addr,
    adapter: ProbeAdapter,
    policy: ProbePolicy,
    max_ttl: int = DEFAULT_MAX_TTL,
) -> float:
    if a == b:
        return 0.0
    return latency_from_traces(
        adapter.traceroute(a, max_ttl, policy), adapter.traceroute(b, max_ttl, policy)
    )


def direct_hop_delay(direct: TracerouteResult) -> float:
    """One-way delay from the vantage to a router, read from a direct traceroute."""
    return final_rtt(direct) / 2.0


def intermediate_hop_delay(trace: TracerouteResult, router: Ipv6Addr) -> Optional[float]:
    """The same delay read off an intermediate hop; inflated on label-switched paths."""
    for hop in trace.hops[:-1]:
        if hop.responder == router and hop.rtt_samples:
            return float(np.median(hop.rtt_samples)) / 2.0
    return None


def latency_matrix(routers: Sequence[Ipv6Addr], direct: DirectTraces) -> np.ndarray:
    """Pairwise one-way latency, measured only for path-consistent pairs.

    A pair is measured from a vantage when one router appears on the other's
    direct trace.  Estimates from several vantages are merged by median;
    unmeasured pairs stay at infinity.
    """
    index = {addr: i for i, addr in enumerate(routers)}
    estimates: dict[tuple[int, int], list[float]] = defaultdict(list)
    for vantage in sorted(direct):
        traces = direct[vantage]
        for b in routers:
            trace_b = traces.get(b)
            if trace_b is None or not trace_b.reached:
                continue
            j = index[b]
            for hop in trace_b.hops[:-1]:
                a = hop.responder
                if a is None or a == b or a not in index:
                    continue
                trace_a = traces.get(a)
                if trace_a is None or not trace_a.reached:
                    continue
                i = index[a]
                estimates[(min(i, j), max(i, j))].append(latency_from_traces(trace_a, trace_b))

    matrix = np.full((len(routers), len(routers)), np.inf)
    np.fill_diagonal(matrix, 0.0)
    for (i, j), values in estimates.items():
        matrix[i, j] = matrix[j, i] = float(np.median(values))
    return matrix
