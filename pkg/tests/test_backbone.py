import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leomap.backbone.cluster import AMBIGUOUS_FLAG, MatrixShapeMismatch, cluster_unresolved
from leomap.backbone.graph import (
    BackboneEdge,
    BackboneGraph,
    coverage_report,
    export_graph,
    infer_edges,
)
from leomap.backbone.routers import (
    Attribution,
    BackboneRouter,
    NotReached,
    attribute_from_ptr,
    attribute_router,
    collect_candidates,
    direct_hop_delay,
    extract_backbone_router,
    intermediate_hop_delay,
    latency_matrix,
    measure_router_latency,
)
from leomap.config import SiteRecord
from leomap.probe.base import HopObservation, TracerouteResult
from leomap.probe.sim import SimProbeAdapter
from leomap.ptrmap import parse_pop_code

from .conftest import addr

USER = addr("2605:59c8:300::1")
GATEWAY = addr("2620:134:b0fe:250::1")
R_SEA = addr("2620:134:b0ff::1")
R_CHI = addr("2620:134:b0ff::2")
R_DEN = addr("2620:134:b0ff::3")


def _trace(*responders, reached=True, vantage="seattle"):
    hops = tuple(
        HopObservation(ttl, responder, (float(ttl),) if responder is not None else ())
        for ttl, responder in enumerate(responders, start=1)
    )
    return TracerouteResult(responders[-1] if reached else USER, hops, reached, vantage)


class TestRouterExtraction:
    def test_third_to_last(self):
        trace = _trace(GATEWAY, R_SEA, R_CHI, GATEWAY, USER)
        assert extract_backbone_router(trace) == R_CHI

    def test_short_and_anonymous(self):
        assert extract_backbone_router(_trace(GATEWAY, USER)) is None
        assert extract_backbone_router(_trace(GATEWAY, None, GATEWAY, USER)) is None

    def test_requires_reached_trace(self):
        with pytest.raises(NotReached):
            extract_backbone_router(_trace(GATEWAY, R_SEA, None, reached=False))

    def test_candidates_skip_first_and_last_two(self):
        traces = [
            _trace(GATEWAY, R_SEA, R_CHI, GATEWAY, USER),
            _trace(GATEWAY, R_SEA, None, GATEWAY, USER, vantage="dallas"),
            _trace(GATEWAY, R_SEA, None, reached=False),
        ]
        evidence, anonymous = collect_candidates(traces)
        assert sorted(evidence) == [R_SEA, R_CHI]
        assert len(evidence[R_SEA]) == 2
        assert anonymous == 1


class TestPtrAttribution:
    def test_pop_host(self):
        router = attribute_from_ptr(R_SEA, "edge1.sttlwax1.pop.starlinkisp.net", ["t1"])
        assert (router.attribution, router.pop.code, router.label) == (Attribution.PTR, "sttlwax1", "sttlwax1")

    @pytest.mark.parametrize(
        "name, flag",
        [
            (None, "no-ptr"),
            ("customer.sttlwax1.pop.starlinkisp.net", "customer-ptr"),
            ("core1.example.net", "foreign-ptr"),
        ],
    )
    def test_unresolved(self, name, flag):
        router = attribute_from_ptr(R_SEA, name)
        assert router.attribution is Attribution.UNRESOLVED
        assert router.pop is None
        assert router.flags == (flag,)

    def test_attribute_router_on_sim(self, two_pop, fast_policy):
        adapter = SimProbeAdapter(two_pop)
        router = two_pop.pops["chcoilx1"].routers[0]
        attributed = attribute_router(router, adapter, fast_policy, ["t1", "t2"])
        assert (attributed.pop.code, attributed.evidence) == ("chcoilx1", ("t1", "t2"))
        assert attributed.ptr_name == "edge1.chcoilx1.pop.starlinkisp.net"

    def test_invariants(self):
        with pytest.raises(ValueError):
            BackboneRouter(R_SEA, None, Attribution.PTR)
        with pytest.raises(ValueError):
            BackboneRouter(R_SEA, parse_pop_code("sttlwax1"), Attribution.UNRESOLVED)


class TestLatency:
    def test_same_pop_routers(self, line_topology, fast_policy):
        adapter = SimProbeAdapter(line_topology, "seattle")
        first, second = line_topology.pops["chcoilx1"].routers[:2]
        assert measure_router_latency(first, second, adapter, fast_policy) == pytest.approx(1.0, abs=0.5)

    def test_adjacent_pops(self, line_topology, fast_policy):
        adapter = SimProbeAdapter(line_topology, "seattle")
        seattle = line_topology.pops["sttlwax1"].routers[0]
        denver = line_topology.pops["dnvrcox1"].routers[0]
        assert measure_router_latency(seattle, denver, adapter, fast_policy) == pytest.approx(20.0, abs=1.0)
        assert measure_router_latency(denver, seattle, adapter, fast_policy) == pytest.approx(20.0, abs=1.0)

    def test_identical_routers(self, line_topology, fast_policy):
        adapter = SimProbeAdapter(line_topology, "seattle")
        router = line_topology.pops["sttlwax1"].routers[0]
        assert measure_router_latency(router, router, adapter, fast_policy) == 0.0

    def test_intermediate_hops_overestimate_under_mpls(self, line_topology, fast_policy):
        adapter = SimProbeAdapter(line_topology, "seattle")
        denver = line_topology.pops["dnvrcox1"].routers[0]
        user_trace = adapter.traceroute(line_topology.users[0].addr, 32, fast_policy)
        naive = intermediate_hop_delay(user_trace, denver)
        direct = direct_hop_delay(adapter.traceroute(denver, 32, fast_policy))
        assert direct == pytest.approx(31.0)
        assert naive - direct >= 15.0 - 1e-9

    def test_latency_matrix_from_direct_traces(self, line_topology, fast_policy):
        adapter = SimProbeAdapter(line_topology, "seattle")
        routers = [line_topology.pops[code].routers[0] for code in ("sttlwax1", "dnvrcox1", "chcoilx1")]
        direct = {"seattle": {router: adapter.traceroute(router, 32, fast_policy) for router in routers}}
        matrix = latency_matrix(routers, direct)
        assert matrix[0, 1] == pytest.approx(20.0)
        assert matrix[1, 2] == pytest.approx(20.0)
        assert matrix[0, 2] == pytest.approx(40.0)
        assert np.allclose(matrix, matrix.T)

    def test_unmeasured_pairs_stay_infinite(self):
        matrix = latency_matrix([R_SEA, R_CHI], {})
        assert matrix[0, 0] == 0.0
        assert np.isinf(matrix[0, 1])


def _ptr(router_addr, code):
    return BackboneRouter(router_addr, parse_pop_code(code), Attribution.PTR)


def _bare(router_addr):
    return BackboneRouter(router_addr)


class TestClustering:
    def test_close_router_joins_anchor(self):
        result = cluster_unresolved([_ptr(R_SEA, "sttlwax1"), _bare(R_CHI)], np.array([[0.0, 2.0], [2.0, 0.0]]))
        assert result[1].attribution is Attribution.LATENCY_CLUSTER
        assert result[1].pop.code == "sttlwax1"
        assert result[0] == _ptr(R_SEA, "sttlwax1")

    def test_far_router_gets_unknown_label(self):
        result = cluster_unresolved([_ptr(R_SEA, "sttlwax1"), _bare(R_CHI)], np.array([[0.0, 50.0], [50.0, 0.0]]))
        assert result[1].attribution is Attribution.UNRESOLVED
        assert (result[1].pop, result[1].cluster, result[1].label) == (None, "unknown-1", "unknown-1")

    def test_two_anchors_make_ambiguous(self):
        matrix = np.array([[0.0, 4.0, 2.0], [4.0, 0.0, 2.0], [2.0, 2.0, 0.0]])
        result = cluster_unresolved([_ptr(R_SEA, "sttlwax1"), _ptr(R_CHI, "chcoilx1"), _bare(R_DEN)], matrix)
        assert result[2].pop is None
        assert AMBIGUOUS_FLAG in result[2].flags
        assert [r.pop.code for r in result[:2]] == ["sttlwax1", "chcoilx1"]

    def test_unknown_labels_follow_smallest_address(self):
        routers = [_bare(addr("2620:134:b0ff::9")), _bare(addr("2620:134:b0ff::4")), _bare(addr("2620:134:b0ff::7"))]
        matrix = np.array([[0.0, 100.0, 1.0], [100.0, 0.0, 100.0], [1.0, 100.0, 0.0]])
        result = cluster_unresolved(routers, matrix)
        assert [r.cluster for r in result] == ["unknown-2", "unknown-1", "unknown-2"]

    def test_exact_threshold_does_not_link(self):
        matrix = np.array([[0.0, 5.0], [5.0, 0.0]])
        result = cluster_unresolved([_ptr(R_SEA, "sttlwax1"), _bare(R_CHI)], matrix, 5.0)
        assert result[1].cluster == "unknown-1"

    def test_bad_matrix(self):
        with pytest.raises(MatrixShapeMismatch):
            cluster_unresolved([_bare(R_SEA)], np.zeros((2, 2)))
        with pytest.raises(MatrixShapeMismatch):
            cluster_unresolved([_bare(R_SEA), _bare(R_CHI)], np.array([[0.0, 1.0], [2.0, 0.0]]))

    def test_empty(self):
        assert cluster_unresolved([], np.zeros((0, 0))) == []


def _brute_force(routers, matrix, threshold):
    """Component labels by flood fill over close pairs, then the same attribution rules."""
    n = len(routers)
    component = [None] * n
    for start in range(n):
        if component[start] is not None:
            continue
        component[start] = start
        stack = [start]
        while stack:
            i = stack.pop()
            for j in range(n):
                if component[j] is None and matrix[i][j] < threshold:
                    component[j] = start
                    stack.append(j)
    members = {}
    for i, c in enumerate(component):
        members.setdefault(c, []).append(i)
    outcome = {}
    unanchored = []
    for group in members.values():
        anchors = {routers[i].pop.code for i in group if routers[i].attribution is Attribution.PTR}
        bare = [i for i in group if routers[i].attribution is not Attribution.PTR]
        if len(anchors) == 1:
            for i in bare:
                outcome[routers[i].addr] = anchors.copy().pop()
        elif anchors:
            for i in bare:
                outcome[routers[i].addr] = AMBIGUOUS_FLAG
        elif bare:
            unanchored.append(bare)
    unanchored.sort(key=lambda group: min(routers[i].addr for i in group))
    for number, group in enumerate(unanchored, start=1):
        for i in group:
            outcome[routers[i].addr] = f"unknown-{number}"
    return outcome


def _summarise(result):
    summary = {}
    for router in result:
        if router.attribution is Attribution.PTR:
            continue
        if AMBIGUOUS_FLAG in router.flags:
            summary[router.addr] = AMBIGUOUS_FLAG
        else:
            summary[router.addr] = router.label
    return summary


def _random_matrix(rng, n, threshold):
    """Symmetric latencies mixing close pairs, exact-threshold pairs, far pairs and unmeasured ones."""
    kinds = rng.choice(4, size=(n, n), p=[0.02, 0.02, 0.66, 0.30])
    values = np.select(
        [kinds == 0, kinds == 1, kinds == 2],
        [rng.uniform(0.0, threshold, size=(n, n)), np.full((n, n), threshold), rng.uniform(threshold, 80.0, size=(n, n))],
        default=np.inf,
    )
    upper = np.triu(values, k=1)
    matrix = upper + upper.T
    np.fill_diagonal(matrix, 0.0)
    return matrix


@given(st.integers(min_value=0, max_value=2**32 - 1), st.integers(min_value=1, max_value=200))
@settings(max_examples=50, deadline=None)
def test_clustering_matches_brute_force(seed, n):
    threshold = 5.0
    rng = np.random.default_rng(seed)
    pops = [None, None, "sttlwax1", "chcoilx1", "dnvrcox1"]
    routers = []
    for i in range(n):
        pop = pops[rng.integers(len(pops))]
        router_addr = addr(f"2620:134:b0ff::{i + 1:x}")
        routers.append(_ptr(router_addr, pop) if pop else _bare(router_addr))
    matrix = _random_matrix(rng, n, threshold)
    expected = _brute_force(routers, matrix, threshold)
    assert _summarise(cluster_unresolved(routers, matrix, threshold)) == expected

    shuffler = random.Random(seed)
    for _ in range(10):
        order = list(range(n))
        shuffler.shuffle(order)
        shuffled = cluster_unresolved([routers[i] for i in order], matrix[np.ix_(order, order)], threshold)
        assert _summarise(shuffled) == expected


POPS = {R_SEA: "sttlwax1", R_CHI: "chcoilx1", R_DEN: "dnvrcox1"}


class TestEdgeInference:
    def test_consecutive_routers_make_an_edge(self):
        traces = [_trace(GATEWAY, R_SEA, R_CHI, GATEWAY, USER), _trace(GATEWAY, R_SEA, R_CHI, GATEWAY, USER)]
        graph = infer_edges(traces, POPS)
        assert graph.edge_set() == {("chcoilx1", "sttlwax1")}
        assert graph.edges[("chcoilx1", "sttlwax1")].evidence == 2
        assert graph.edges[("chcoilx1", "sttlwax1")].one_way_delay_ms is None

    def test_min_evidence(self):
        traces = [_trace(GATEWAY, R_SEA, R_CHI, GATEWAY, USER)]
        assert infer_edges(traces, POPS).edges == {}
        assert infer_edges(traces, POPS, min_evidence=1).edge_set() == {("chcoilx1", "sttlwax1")}

    def test_anonymous_gap_breaks_adjacency(self):
        traces = [_trace(GATEWAY, R_SEA, None, R_CHI, GATEWAY, USER)] * 3
        graph = infer_edges(traces, POPS, min_evidence=1)
        assert graph.edges == {}
        assert graph.nodes == {"sttlwax1", "chcoilx1"}

    def test_single_pop(self):
        traces = [_trace(GATEWAY, R_SEA, GATEWAY, USER)] * 2
        graph = infer_edges(traces, POPS, min_evidence=1)
        assert (graph.nodes, graph.edges) == ({"sttlwax1"}, {})

    def test_unattributed_routers_are_ignored(self):
        traces = [_trace(GATEWAY, R_SEA, addr("2620:134:b0ff::99"), R_CHI, GATEWAY, USER)] * 2
        assert infer_edges(traces, POPS).edges == {}

    def test_delay_is_median_of_measurements(self):
        traces = [
            _trace(GATEWAY, R_SEA, R_CHI, GATEWAY, USER, vantage="seattle"),
            _trace(GATEWAY, R_SEA, R_CHI, GATEWAY, USER, vantage="dallas"),
            _trace(GATEWAY, R_CHI, R_SEA, GATEWAY, USER, vantage="denver"),
        ]
        measured = {"seattle": 19.0, "dallas": 21.0, "denver": 26.0}
        graph = infer_edges(traces, POPS, measure=lambda vantage, a, b: measured[vantage])
        assert graph.edges[("chcoilx1", "sttlwax1")].one_way_delay_ms == pytest.approx(21.0)

    def test_edge_invariants(self):
        with pytest.raises(ValueError):
            BackboneEdge("sttlwax1", "chcoilx1", 1.0, 1)
        with pytest.raises(ValueError):
            BackboneEdge("chcoilx1", "sttlwax1", -1.0, 1)


SITES = {
    "sttlwax1": SiteRecord("sttlwax1", "Seattle, WA", 47.6062, -122.3321, "US"),
    "chcoilx1": SiteRecord("chcoilx1", "Chicago, IL", 41.8781, -87.6298, "US"),
    "dnvrcox1": SiteRecord("dnvrcox1", "Denver, CO", None, None, "US"),
}


class TestExport:
    def test_distances(self):
        graph = BackboneGraph()
        graph.add_edge(BackboneEdge("chcoilx1", "sttlwax1", 20.0, 4))
        graph.add_edge(BackboneEdge("chcoilx1", "dnvrcox1", 11.23456, 2))
        document = export_graph(graph, SITES)
        assert [node["pop"] for node in document["nodes"]] == ["chcoilx1", "dnvrcox1", "sttlwax1"]
        seattle_chicago = document["edges"][1]
        assert seattle_chicago["distance_km"] == pytest.approx(2795, rel=0.01)
        assert "distance_km" not in document["edges"][0]
        assert document["edges"][0]["one_way_delay_ms"] == 11.235

    def test_without_sites(self):
        graph = BackboneGraph()
        graph.add_edge(BackboneEdge("chcoilx1", "sttlwax1", None, 2))
        document = export_graph(graph)
        assert document["nodes"][0] == {"pop": "chcoilx1", "label": "", "lat": None, "lon": None}
        assert document["edges"] == [{"a": "chcoilx1", "b": "sttlwax1", "one_way_delay_ms": None, "evidence": 2}]

    def test_empty_graph(self):
        assert export_graph(BackboneGraph()) == {"nodes": [], "edges": []}

    def test_networkx_view(self):
        graph = BackboneGraph()
        graph.add_edge(BackboneEdge("chcoilx1", "sttlwax1", 20.0, 4))
        assert graph.to_networkx()["chcoilx1"]["sttlwax1"]["delay"] == 20.0


def test_coverage_report():
    graph = BackboneGraph()
    graph.add_edge(BackboneEdge("chcoilx1", "sttlwax1", 20.0, 4))
    report = coverage_report(graph, ["sttlwax1"], ["sttlwax1", "chcoilx1", "mmmiflx1"])
    assert report["pops_without_vantage"] == ["chcoilx1", "mmmiflx1"]
    assert report["unobserved_pops"] == ["mmmiflx1"]
    assert (report["nodes"], report["edges"]) == (2, 1)


def test_random_orderings_do_not_change_edges():
    traces = [_trace(GATEWAY, R_SEA, R_CHI, R_DEN, GATEWAY, USER)] * 2 + [_trace(GATEWAY, R_DEN, R_CHI, GATEWAY, USER)] * 2
    expected = infer_edges(traces, POPS).edge_set()
    rng = random.Random(0)
    for _ in range(5):
        shuffled = list(traces)
        rng.shuffle(shuffled)
        assert infer_edges(shuffled, POPS).edge_set() == expected
    assert expected == {("chcoilx1", "sttlwax1"), ("chcoilx1", "dnvrcox1")}
