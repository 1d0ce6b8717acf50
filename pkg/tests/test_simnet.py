import ipaddress

import pytest

from leomap.addressing import AddressRole, classify
from leomap.backbone.routers import extract_backbone_router
from leomap.config import load_sim_config
from leomap.ptrmap import PtrKind, parse_ptr
from leomap.simnet.answer import answer_echo, answer_ptr, answer_traceroute, forward_path
from leomap.simnet.topology import (
    InvalidTopology,
    UnknownTarget,
    build_sim,
    geoip_feed,
    ground_truth,
    ptr_name,
)

from .conftest import SIM_CONFIGS, addr, line_config, two_pop_config


class TestBuild:
    def test_two_pop_construction(self, two_pop):
        assert len(two_pop.users) == 20
        assert len(two_pop.gateways) == 4
        nodes = [u.addr for u in two_pop.users] + [g.addr for g in two_pop.gateways] + [
            r.addr for r in two_pop.routers()
        ]
        named = [a for a in nodes if ptr_name(two_pop, a) is not None]
        assert len(named) == 20 + 2

    def test_address_plans_follow_roles(self, two_pop):
        for user in two_pop.users:
            assert classify(user.addr) is AddressRole.USER_ROUTER
            assert user.addr in user.geo.prefix
        for gateway in two_pop.gateways:
            assert classify(gateway.addr) is AddressRole.GATEWAY
        for router in two_pop.routers():
            assert classify(router.addr) is AddressRole.POP_INFRASTRUCTURE

    def test_deterministic(self):
        first = build_sim(two_pop_config())
        second = build_sim(two_pop_config())
        assert first.users == second.users
        assert first.gateways == second.gateways
        assert first.silent == second.silent
        other = build_sim(two_pop_config(seed=12))
        assert {u.addr for u in other.users} != {u.addr for u in first.users}

    def test_duplicate_user_address(self):
        config = two_pop_config()
        config.allocations[0].addresses = ["2605:59c8:100:1200::1", "2605:59c8:100:1200::1"]
        with pytest.raises(InvalidTopology, match="duplicate user"):
            build_sim(config)

    @pytest.mark.parametrize(
        "overrides, message",
        [
            ({"links": []}, "not connected"),
            ({"links": [["sttlwax1", "sttlwax1", 5]]}, "self-link"),
            ({"links": [["sttlwax1", "nwyynyx1", 5]]}, "unknown PoP"),
            ({"links": [["sttlwax1", "chcoilx1", 0]]}, "delay"),
            ({"links": [["sttlwax1", "chcoilx1", 5], ["chcoilx1", "sttlwax1", 6]]}, "duplicate link"),
            ({"pops": [{"code": "sttlwax1", "routers": 16}, {"code": "chcoilx1"}]}, "routers"),
            ({"pops": [{"code": "sttlwax1"}, {"code": "sttlwax1"}]}, "duplicate PoP"),
            ({"pops": [{"code": "sea1"}, {"code": "chcoilx1"}]}, "Malformed"),
            ({"pops": []}, "at least one PoP"),
            ({"vantages": [{"name": "v", "pop": "nwyynyx1"}]}, "unknown PoP"),
            ({"faults": {"silent_user_rate": 1.5}}, r"\[0, 1\]"),
            ({"gateways_per_pop": 0}, "gateways_per_pop"),
        ],
    )
    def test_invalid_topologies(self, overrides, message):
        with pytest.raises(InvalidTopology, match=message):
            build_sim(two_pop_config(**overrides))

    def test_allocation_at_unknown_pop(self):
        config = two_pop_config()
        config.allocations[0].pop = "nwyynyx1"
        with pytest.raises(InvalidTopology):
            build_sim(config)

    def test_invalid_topology_is_a_config_error(self):
        from leomap.errors import ConfigError

        assert issubclass(InvalidTopology, ConfigError)

    def test_bundled_configs_build(self):
        for path in sorted(SIM_CONFIGS.glob("*.yaml")):
            topology = build_sim(load_sim_config(path))
            assert topology.users


class TestAnswers:
    def test_same_pop_path(self, two_pop):
        user = next(u for u in two_pop.users if u.pop == "sttlwax1")
        trace = answer_traceroute(two_pop, "seattle", user.addr, 32)
        assert trace.responders() == [
            two_pop.vantages["seattle"].gateway,
            two_pop.pops["sttlwax1"].routers[0],
            user.gateway,
            user.addr,
        ]
        assert extract_backbone_router(trace) == two_pop.pops["sttlwax1"].routers[0]

    def test_mpls_inflation_on_intermediate_hops_only(self, line_topology):
        user = line_topology.users[0]
        path = forward_path(line_topology, "seattle", user.addr)
        trace = answer_traceroute(line_topology, "seattle", user.addr, 32)
        assert trace.reached
        for hop, step in zip(trace.hops[:-1], path[:-1]):
            expected = 2 * step.delay_ms + (30.0 if step.is_router else 0.0)
            assert hop.rtt_samples == (pytest.approx(expected),)
        # 10 access + 1 gateway + 40 links + serving router + 1 gateway + 10 user access
        total = 10 + 1 + 40 + user.serving_router * 1.0 + 1 + 10
        assert trace.final_samples() == (pytest.approx(2 * total),)

    def test_direct_router_trace_has_no_inflation(self, line_topology):
        router = line_topology.pops["chcoilx1"].routers[0]
        trace = answer_traceroute(line_topology, "seattle", router, 32)
        assert trace.reached
        assert len(trace.hops) == 4
        assert trace.final_samples() == (pytest.approx(2 * (10 + 1 + 40)),)

    def test_multi_router_pop_hops(self, line_topology):
        routers = line_topology.pops["chcoilx1"].routers
        far = answer_traceroute(line_topology, "seattle", routers[2], 32)
        assert far.responders()[-3:] == list(routers)
        assert far.final_samples()[0] - answer_traceroute(
            line_topology, "seattle", routers[0], 32
        ).final_samples()[0] == pytest.approx(4.0)

    def test_third_to_last_hop_is_home_router(self, eight_pop):
        homes = {router.addr: router.pop for router in eight_pop.routers()}
        for vantage in eight_pop.vantages:
            for user in eight_pop.users[::97]:
                trace = answer_traceroute(eight_pop, vantage, user.addr, 32)
                assert trace.reached
                assert len(trace.hops) >= 4
                assert homes[extract_backbone_router(trace)] == user.pop

    def test_echo_and_ptr(self, two_pop):
        user = two_pop.users[0]
        assert answer_echo(two_pop, user.addr)
        assert parse_ptr(answer_ptr(two_pop, user.addr)).pop.code == user.pop
        unprovisioned = ipaddress.IPv6Address(int(user.addr) + (1 << 72))
        if two_pop.find(unprovisioned) is None:
            assert not answer_echo(two_pop, unprovisioned)
            assert answer_ptr(two_pop, unprovisioned) is None

    def test_router_ptr_and_suppression(self):
        config = two_pop_config()
        topology = build_sim(config)
        router = topology.pops["sttlwax1"].routers[0]
        assert answer_ptr(topology, router) == "edge1.sttlwax1.pop.starlinkisp.net"
        config.faults.ptr_suppressed = [str(router)]
        suppressed = build_sim(config)
        assert answer_echo(suppressed, router)
        assert answer_ptr(suppressed, router) is None

    def test_gateway_ptr_switch(self):
        topology = build_sim(two_pop_config(gateway_ptr=True))
        gateway = topology.pops["chcoilx1"].gateways[1]
        parsed = parse_ptr(answer_ptr(topology, gateway))
        assert (parsed.kind, parsed.label, parsed.pop.code) == (PtrKind.POP_HOST, "gw2", "chcoilx1")

    def test_silent_user(self):
        config = two_pop_config()
        target = "2605:59c8:200:4200::1"
        config.allocations[1].addresses = [target]
        config.faults.silent = [target]
        topology = build_sim(config)
        assert not answer_echo(topology, addr(target))
        trace = answer_traceroute(topology, "seattle", addr(target), 10)
        assert not trace.reached
        assert len(trace.hops) == 10
        assert trace.hops[4].responder is None
        assert trace.hops[3].responder is not None
        assert addr(target) not in ground_truth(topology).active_users

    def test_jitter_is_bounded_and_reproducible(self):
        topology = build_sim(two_pop_config(jitter_ms=0.5))
        user = topology.users[-1]
        first = answer_traceroute(topology, "seattle", user.addr, 32, samples=3)
        again = answer_traceroute(topology, "seattle", user.addr, 32, samples=3)
        assert first == again
        for sample in first.final_samples():
            assert abs(sample - 84.0) <= 0.5 + 1e-9

    def test_anonymous_hops_keep_final(self):
        topology = build_sim(two_pop_config(faults={"anonymous_hop_rate": 1.0}))
        user = topology.users[-1]
        trace = answer_traceroute(topology, "seattle", user.addr, 32)
        assert trace.reached
        assert all(hop.responder is None for hop in trace.hops[:-1])

    def test_unknown_target_and_vantage(self, two_pop):
        with pytest.raises(UnknownTarget):
            forward_path(two_pop, "seattle", addr("2605:59c8:ffff::1"))
        with pytest.raises(UnknownTarget):
            forward_path(two_pop, "nowhere", two_pop.users[0].addr)


class TestGroundTruth:
    def test_export(self, two_pop):
        truth = ground_truth(two_pop)
        document = truth.to_dict()
        assert len(document["active_users"]) == 20
        assert document["edges"] == [{"a": "chcoilx1", "b": "sttlwax1", "one_way_delay_ms": 20.0}]
        assert document["snapshot_time"] == "2024-11-25T00:00:00Z"
        assert sorted(document["pops"]) == ["chcoilx1", "sttlwax1"]

    def test_geoip_feed_matches_allocations(self, two_pop):
        feed = geoip_feed(two_pop)
        assert [str(entry.prefix) for entry in feed] == ["2605:59c8:100::/48", "2605:59c8:200::/48"]

    def test_eight_pop_shape(self, eight_pop):
        truth = ground_truth(eight_pop)
        assert len(eight_pop.pops) == 8
        assert len(truth.pop_edges) == 12
        assert len(eight_pop.gateways) == 24
        assert len(truth.active_users) == 5000
        assert len({u.geo.city for u in eight_pop.users}) == 20
        pops = {pop for pop in eight_pop.pops}
        assert eight_pop.used_links(eight_pop.vantages, pops) == set(truth.pop_edges)
