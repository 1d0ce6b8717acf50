"""PoP-level backbone graph: edge inference, coverage and export."""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, Mapping, Optional, Sequence

import networkx as nx
import numpy as np

from ..addressing import Ipv6Addr
from ..config import SiteRecord
from ..probe.base import TracerouteResult

DEFAULT_MIN_EVIDENCE = 2
EARTH_RADIUS_KM = 6371.0

EdgeKey = tuple[str, str]
# (vantage, nearer router, farther router) -> one-way delay, or None when unmeasurable
LatencyMeasure = Callable[[str, Ipv6Addr, Ipv6Addr], Optional[float]]


def edge_key(a: str, b: str) -> EdgeKey:
    return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class BackboneEdge:
    a: str
    b: str
    one_way_delay_ms: Optional[float]
    evidence: int

    def __post_init__(self) -> None:
        if self.a >= self.b:
            raise ValueError(f"Edge endpoints must be ordered and distinct: {self.a}, {self.b}")
        if self.one_way_delay_ms is not None and self.one_way_delay_ms < 0:
            raise ValueError(f"Negative edge delay {self.a}-{self.b}")

    @property
    def key(self) -> EdgeKey:
        return (self.a, self.b)


@dataclass
class BackboneGraph:
    nodes: set[str] = field(default_factory=set)
    edges: Dict[EdgeKey, BackboneEdge] = field(default_factory=dict)

    def add_edge(self, edge: BackboneEdge) -> None:
        self.nodes.update(edge.key)
        self.edges[edge.key] = edge

    def edge_set(self) -> set[EdgeKey]:
        return set(self.edges)

    def to_networkx(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(sorted(self.nodes))
        for edge in self.edges.values():
            graph.add_edge(edge.a, edge.b, delay=edge.one_way_delay_ms, evidence=edge.evidence)
        return graph


def infer_edges(
    traces: Iterable[TracerouteResult],
    router_pops: Mapping[Ipv6Addr, str],
    *,
    min_evidence: int = DEFAULT_MIN_EVIDENCE,
    measure: Optional[LatencyMeasure] = None,
) -> BackboneGraph:
    """Link PoPs whose routers answer at consecutive TTLs of the same trace."""
    evidence: Dict[EdgeKey, int] = defaultdict(int)
    pairs: Dict[EdgeKey, set[tuple[str, Ipv6Addr, Ipv6Addr]]] = defaultdict(set)
    graph = BackboneGraph()
    for trace in traces:
        hops = trace.hops
        for hop in hops:
            if hop.responder is not None and hop.responder in router_pops:
                graph.nodes.add(router_pops[hop.responder])
        for near, far in zip(hops, hops[1:]):
            if near.responder is None or far.responder is None:
                continue
            pop_a = router_pops.get(near.responder)
            pop_b = router_pops.get(far.responder)
            if pop_a is None or pop_b is None or pop_a == pop_b:
                continue
            key = edge_key(pop_a, pop_b)
            evidence[key] += 1
            pairs[key].add((trace.vantage, near.responder, far.responder))

    dropped = 0
    for key in sorted(evidence):
        if evidence[key] < min_evidence:
            dropped += 1
            continue
        delay = None
        if measure is not None:
            estimates = [
                value
                for value in (measure(*pair) for pair in sorted(pairs[key]))
                if value is not None
            ]
            if estimates:
                delay = float(np.median(estimates))
        graph.add_edge(BackboneEdge(key[0], key[1], delay, evidence[key]))
    logging.info(
        "Backbone graph: %d PoPs, %d edges (%d below min evidence %d)",
        len(graph.nodes),
        len(graph.edges),
        dropped,
        min_evidence,
    )
    return graph


def great_circle_km(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    phi1, phi2 = math.radians(lat1), math.radians(lat2)
    dphi = phi2 - phi1
    dlambda = math.radians(lon2 - lon1)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlambda / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def export_graph(graph: BackboneGraph, sites: Optional[Mapping[str, SiteRecord]] = None) -> Dict[str, Any]:
    """Graph document with nodes and edges sorted for stable diffs."""
    sites = sites or {}
    nodes = []
    for pop in sorted(graph.nodes):
        site = sites.get(pop)
        nodes.append(
            {
                "pop": pop,
                "label": site.label if site is not None else "",
                "lat": site.lat if site is not None else None,
                "lon": site.lon if site is not None else None,
            }
        )
    edges = []
    for key in sorted(graph.edges):
        edge = graph.edges[key]
        record: Dict[str, Any] = {
            "a": edge.a,
            "b": edge.b,
            "one_way_delay_ms": None if edge.one_way_delay_ms is None else round(edge.one_way_delay_ms, 3),
        }
        site_a, site_b = sites.get(edge.a), sites.get(edge.b)
        if site_a is not None and site_b is not None and site_a.has_coordinates and site_b.has_coordinates:
            record["distance_km"] = round(great_circle_km(site_a.lat, site_a.lon, site_b.lat, site_b.lon), 1)
        record["evidence"] = edge.evidence
        edges.append(record)
    return {"nodes": nodes, "edges": edges}


def coverage_report(
    graph: BackboneGraph,
    vantage_pops: Sequence[str],
    expected_pops: Iterable[str] = (),
) -> Dict[str, Any]:
    """PoPs without a vantage of their own, and expected PoPs the graph never reached."""
    vantages = set(vantage_pops)
    expected = set(expected_pops)
    report = {
        "vantage_pops": sorted(vantages),
        "pops_without_vantage": sorted((graph.nodes | expected) - vantages),
        "unobserved_pops": sorted(expected - graph.nodes),
        "nodes": len(graph.nodes),
        "edges": len(graph.edges),
    }
    if report["pops_without_vantage"]:
        logging.warning(
            "%d PoPs have no vantage of their own; links off the vantage paths may be missing",
            len(report["pops_without_vantage"]),
        )
    if report["unobserved_pops"]:
        logging.warning(
            "%d PoPs serve users but never appeared in the backbone graph: %s",
            len(report["unobserved_pops"]),
            ", ".join(report["unobserved_pops"]),
        )
    return report
