"""Simulated operator network: address plan, PTR zone, PoP backbone and faults.

A topology is built once from a ``SimConfig`` and never mutated afterwards,
so adapters may query it from many threads.  All randomness is drawn at build
time from streams derived from the seed; query-time randomness (jitter,
anonymous hops, echo loss) is keyed by the query itself in ``answer.py``.
"""

from __future__ import annotations

import ipaddress
import logging
import math
import random
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Dict, Iterable, Optional, Union

import networkx as nx

from ..addressing import (
    DEFAULT_POP_BLOCKS,
    Ipv6Addr,
    USER_DELEGATION_LEN,
    bits,
    candidate_count,
    is_user_router_address,
    iter_valid_gateways,
    parse_prefix,
)
from ..config import SimConfig
from ..errors import ConfigError
from ..geoip import GeoIpEntry
from ..ptrmap import MalformedPopCode, PopId, format_customer_ptr, format_pophost_ptr, parse_pop_code
from ..utils import FixedClock, format_utc, parse_utc

MAX_ROUTERS_PER_POP = 15
_POPS_PER_BLOCK = 256


class InvalidTopology(ConfigError):
    pass


class UnknownTarget(LookupError):
    pass


@dataclass(frozen=True)
class SimPop:
    pop: PopId
    label: str
    routers: tuple[Ipv6Addr, ...]
    gateways: tuple[Ipv6Addr, ...]

    @property
    def code(self) -> str:
        return self.pop.code


@dataclass(frozen=True)
class SimLink:
    a: str
    b: str
    one_way_delay_ms: float

    @property
    def key(self) -> tuple[str, str]:
        return (self.a, self.b) if self.a <= self.b else (self.b, self.a)


@dataclass(frozen=True)
class SimGateway:
    addr: Ipv6Addr
    pop: str
    index: int


@dataclass(frozen=True)
class SimRouter:
    addr: Ipv6Addr
    pop: str
    index: int


@dataclass(frozen=True)
class SimUser:
    addr: Ipv6Addr
    pop: str
    geo: GeoIpEntry
    gateway: Ipv6Addr
    serving_router: int


@dataclass(frozen=True)
class SimVantage:
    name: str
    pop: str
    access_delay_ms: float
    gateway: Ipv6Addr


SimNode = Union[SimUser, SimGateway, SimRouter]


@dataclass
class SimTopology:
    config: SimConfig
    pops: Dict[str, SimPop]
    links: tuple[SimLink, ...]
    gateways: tuple[SimGateway, ...]
    users: tuple[SimUser, ...]
    vantages: Dict[str, SimVantage]
    silent: frozenset[Ipv6Addr]
    ptr_suppressed: frozenset[Ipv6Addr]
    loss: Dict[Ipv6Addr, float]
    rng_seed: int
    _nodes: Dict[Ipv6Addr, SimNode] = field(default_factory=dict, repr=False)
    _paths: Dict[tuple[str, str], tuple[str, ...]] = field(default_factory=dict, repr=False)
    _link_delay: Dict[tuple[str, str], float] = field(default_factory=dict, repr=False)

    @property
    def mpls_inflation_ms(self) -> float:
        return self.config.mpls_inflation_ms

    @property
    def clock(self) -> FixedClock:
        return FixedClock(parse_utc(self.config.snapshot_time))

    @property
    def snapshot_time(self) -> datetime:
        return parse_utc(self.config.snapshot_time)

    def locate(self, addr: Ipv6Addr) -> SimNode:
        try:
            return self._nodes[addr]
        except KeyError as exc:
            raise UnknownTarget(f"{addr} is not part of the simulated network") from exc

    def find(self, addr: Ipv6Addr) -> Optional[SimNode]:
        return self._nodes.get(addr)

    def vantage(self, name: str) -> SimVantage:
        try:
            return self.vantages[name]
        except KeyError as exc:
            raise UnknownTarget(f"Unknown vantage: {name}") from exc

    def pop_path(self, src: str, dst: str) -> tuple[str, ...]:
        return self._paths[(src, dst)]

    def link_delay(self, a: str, b: str) -> float:
        return self._link_delay[(a, b) if a <= b else (b, a)]

    def inflation_for(self, pop: str) -> float:
        return self.config.mpls_inflation_by_pop.get(pop, self.config.mpls_inflation_ms)

    def routers(self) -> Iterable[SimRouter]:
        for node in self._nodes.values():
            if isinstance(node, SimRouter):
                yield node

    def used_links(self, vantage_names: Iterable[str], dst_pops: Iterable[str]) -> set[tuple[str, str]]:
        """Links traversed by shortest paths from the given vantages to the given PoPs."""
        used: set[tuple[str, str]] = set()
        targets = sorted(set(dst_pops))
        for name in vantage_names:
            src = self.vantage(name).pop
            for dst in targets:
                path = self.pop_path(src, dst)
                for a, b in zip(path, path[1:]):
                    used.add((a, b) if a <= b else (b, a))
        return used


@dataclass(frozen=True)
class GroundTruth:
    active_users: frozenset[Ipv6Addr]
    user_pops: Dict[Ipv6Addr, str]
    pop_edges: Dict[tuple[str, str], float]
    router_pops: Dict[Ipv6Addr, str]
    snapshot_time: datetime

    def to_dict(self) -> Dict[str, Any]:
        return {
            "snapshot_time": format_utc(self.snapshot_time),
            "active_users": [str(addr) for addr in sorted(self.active_users)],
            "user_pops": {str(addr): pop for addr, pop in sorted(self.user_pops.items())},
            "pops": sorted({*self.user_pops.values(), *self.router_pops.values()}),
            "edges": [
                {"a": a, "b": b, "one_way_delay_ms": delay}
                for (a, b), delay in sorted(self.pop_edges.items())
            ],
            "routers": {str(addr): pop for addr, pop in sorted(self.router_pops.items())},
        }


def ground_truth(topology: SimTopology) -> GroundTruth:
    active = frozenset(
        user.addr
        for user in topology.users
        if user.addr not in topology.silent and topology.loss.get(user.addr, 0.0) < 1.0
    )
    return GroundTruth(
        active_users=active,
        user_pops={user.addr: user.pop for user in topology.users},
        pop_edges={link.key: link.one_way_delay_ms for link in topology.links},
        router_pops={router.addr: router.pop for router in topology.routers()},
        snapshot_time=topology.snapshot_time,
    )


def geoip_feed(topology: SimTopology) -> list[GeoIpEntry]:
    """The allocations as a GeoIP feed, one entry per configured prefix (last wins)."""
    feed: Dict[ipaddress.IPv6Network, GeoIpEntry] = {}
    for allocation in topology.config.allocations:
        entry = GeoIpEntry(
            parse_prefix(allocation.prefix),
            allocation.country,
            allocation.region_code,
            allocation.city,
        )
        feed[entry.prefix] = entry
    return list(feed.values())


def _fail(message: str) -> InvalidTopology:
    return InvalidTopology(message)


def _router_address(pop_index: int, router_index: int) -> Ipv6Addr:
    block = DEFAULT_POP_BLOCKS[pop_index // _POPS_PER_BLOCK]
    offset = (pop_index % _POPS_PER_BLOCK) * (MAX_ROUTERS_PER_POP + 1) + router_index + 1
    return ipaddress.IPv6Address(int(block.network_address) + offset)


def _validate_rate(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise _fail(f"{name} must lie in [0, 1]: {value}")


def build_sim(config: SimConfig) -> SimTopology:
    """Materialize a topology; raises InvalidTopology on the first violated constraint."""
    if not config.pops:
        raise _fail("topology needs at least one PoP")
    if len(config.pops) > _POPS_PER_BLOCK * len(DEFAULT_POP_BLOCKS):
        raise _fail(f"too many PoPs for the infrastructure blocks: {len(config.pops)}")

    gateway_pool = [gw for gw in iter_valid_gateways() if bits(gw, 117, 128) != 0]
    if config.gateways_per_pop < 1:
        raise _fail("gateways_per_pop must be >= 1")
    if config.gateways_per_pop * len(config.pops) > len(gateway_pool):
        raise _fail(
            f"{config.gateways_per_pop * len(config.pops)} gateways requested, "
            f"only {len(gateway_pool)} addresses in the gateway plan"
        )
    for name, value in (
        ("user_access_delay_ms", config.user_access_delay_ms),
        ("gateway_delay_ms", config.gateway_delay_ms),
        ("intra_pop_delay_ms", config.intra_pop_delay_ms),
    ):
        if value <= 0:
            raise _fail(f"{name} must be > 0")
    if config.mpls_inflation_ms < 0 or config.jitter_ms < 0:
        raise _fail("mpls_inflation_ms and jitter_ms must be >= 0")

    pops: Dict[str, SimPop] = {}
    nodes: Dict[Ipv6Addr, SimNode] = {}
    gateways: list[SimGateway] = []
    for pop_index, pop_cfg in enumerate(config.pops):
        try:
            pop_id = parse_pop_code(pop_cfg.code)
        except MalformedPopCode as exc:
            raise _fail(str(exc)) from exc
        if pop_id.code in pops:
            raise _fail(f"duplicate PoP code {pop_id.code}")
        if not 1 <= pop_cfg.routers <= MAX_ROUTERS_PER_POP:
            raise _fail(f"{pop_id.code}: routers must be within 1..{MAX_ROUTERS_PER_POP}")
        routers = tuple(_router_address(pop_index, j) for j in range(pop_cfg.routers))
        start = pop_index * config.gateways_per_pop
        pop_gateways = tuple(gateway_pool[start : start + config.gateways_per_pop])
        pops[pop_id.code] = SimPop(pop_id, pop_cfg.label or pop_id.code, routers, pop_gateways)
        for j, addr in enumerate(routers):
            nodes[addr] = SimRouter(addr, pop_id.code, j)
        for k, addr in enumerate(pop_gateways):
            gateway = SimGateway(addr, pop_id.code, k)
            gateways.append(gateway)
            nodes[addr] = gateway

    graph = nx.Graph()
    graph.add_nodes_from(pops)
    links: list[SimLink] = []
    link_delay: Dict[tuple[str, str], float] = {}
    for link_cfg in config.links:
        link = SimLink(link_cfg.a, link_cfg.b, float(link_cfg.one_way_delay_ms))
        if link.a not in pops or link.b not in pops:
            raise _fail(f"link {link.a}-{link.b} references an unknown PoP")
        if link.a == link.b:
            raise _fail(f"self-link on {link.a}")
        if not link.one_way_delay_ms > 0 or not math.isfinite(link.one_way_delay_ms):
            raise _fail(f"link {link.a}-{link.b} delay must be > 0")
        if link.key in link_delay:
            raise _fail(f"duplicate link {link.key[0]}-{link.key[1]}")
        link_delay[link.key] = link.one_way_delay_ms
        links.append(link)
        graph.add_edge(link.a, link.b, weight=link.one_way_delay_ms)
    if not nx.is_connected(graph):
        raise _fail("PoP link graph is not connected")

    vantages: Dict[str, SimVantage] = {}
    for vantage_cfg in config.vantages:
        if vantage_cfg.name in vantages:
            raise _fail(f"duplicate vantage {vantage_cfg.name}")
        if vantage_cfg.pop not in pops:
            raise _fail(f"vantage {vantage_cfg.name} attached to unknown PoP {vantage_cfg.pop}")
        if vantage_cfg.access_delay_ms <= 0:
            raise _fail(f"vantage {vantage_cfg.name} access delay must be > 0")
        vantages[vantage_cfg.name] = SimVantage(
            vantage_cfg.name,
            vantage_cfg.pop,
            vantage_cfg.access_delay_ms,
            pops[vantage_cfg.pop].gateways[0],
        )

    users = _build_users(config, pops, nodes)
    silent, ptr_suppressed, loss = _build_faults(config, users, nodes)

    topology = SimTopology(
        config=config,
        pops=pops,
        links=tuple(links),
        gateways=tuple(gateways),
        users=tuple(users),
        vantages=vantages,
        silent=silent,
        ptr_suppressed=ptr_suppressed,
        loss=loss,
        rng_seed=config.seed,
        _nodes=nodes,
        _paths=_shortest_paths(graph),
        _link_delay=link_delay,
    )
    logging.info(
        "Built sim topology: %d PoPs, %d links, %d gateways, %d users, %d vantages",
        len(pops),
        len(links),
        len(gateways),
        len(users),
        len(vantages),
    )
    return topology


def _build_users(
    config: SimConfig,
    pops: Dict[str, SimPop],
    nodes: Dict[Ipv6Addr, SimNode],
) -> list[SimUser]:
    rng = random.Random(f"{config.seed}:users")
    users: list[SimUser] = []
    for allocation in config.allocations:
        if allocation.pop not in pops:
            raise _fail(f"allocation {allocation.prefix} homed at unknown PoP {allocation.pop}")
        try:
            prefix = parse_prefix(allocation.prefix)
            geo = GeoIpEntry(prefix, allocation.country, allocation.region_code, allocation.city)
        except ValueError as exc:
            raise _fail(f"allocation {allocation.prefix}: {exc}") from exc
        if prefix.prefixlen > USER_DELEGATION_LEN:
            raise _fail(f"allocation {prefix} is longer than /{USER_DELEGATION_LEN}")
        home = pops[allocation.pop]

        addresses: list[Ipv6Addr] = []
        for text in allocation.addresses:
            try:
                addr = ipaddress.IPv6Address(text)
            except ValueError as exc:
                raise _fail(f"invalid user address {text!r}") from exc
            if addr not in prefix or not is_user_router_address(addr):
                raise _fail(f"user address {addr} is not a router address inside {prefix}")
            if addr in nodes:
                raise _fail(f"duplicate user address {addr}")
            nodes[addr] = home  # placeholder, replaced below
            addresses.append(addr)

        capacity = candidate_count(prefix, USER_DELEGATION_LEN)
        if allocation.users > capacity:
            raise _fail(f"allocation {prefix} cannot hold {allocation.users} users")
        shift = 128 - USER_DELEGATION_LEN
        base = int(prefix.network_address)
        attempts = 0
        drawn = 0
        while drawn < allocation.users:
            attempts += 1
            if attempts > allocation.users * 20 + 1000:
                raise _fail(f"allocation {prefix} is too crowded to place {allocation.users} users")
            addr = ipaddress.IPv6Address(base | (rng.randrange(capacity) << shift) | 1)
            if addr in nodes:
                continue
            nodes[addr] = home
            addresses.append(addr)
            drawn += 1

        for addr in sorted(addresses):
            user = SimUser(
                addr=addr,
                pop=home.code,
                geo=geo,
                gateway=rng.choice(home.gateways),
                serving_router=rng.randrange(len(home.routers)),
            )
            nodes[addr] = user
            users.append(user)
    return users


def _parse_fault_addresses(values: Iterable[str], what: str) -> set[Ipv6Addr]:
    found: set[Ipv6Addr] = set()
    for text in values:
        try:
            found.add(ipaddress.IPv6Address(text))
        except ValueError as exc:
            raise _fail(f"invalid {what} address {text!r}") from exc
    return found


def _build_faults(
    config: SimConfig,
    users: list[SimUser],
    nodes: Dict[Ipv6Addr, SimNode],
) -> tuple[frozenset[Ipv6Addr], frozenset[Ipv6Addr], Dict[Ipv6Addr, float]]:
    faults = config.faults
    for name in (
        "silent_user_rate",
        "ptr_suppressed_router_rate",
        "ptr_suppressed_user_rate",
        "anonymous_hop_rate",
        "loss_rate",
    ):
        _validate_rate(name, getattr(faults, name))
    rng = random.Random(f"{config.seed}:faults")

    silent = _parse_fault_addresses(faults.silent, "silent")
    for user in users:
        if rng.random() < faults.silent_user_rate:
            silent.add(user.addr)

    suppressed = _parse_fault_addresses(faults.ptr_suppressed, "ptr_suppressed")
    routers = sorted(addr for addr, node in nodes.items() if isinstance(node, SimRouter))
    for addr in routers:
        if rng.random() < faults.ptr_suppressed_router_rate:
            suppressed.add(addr)
    for user in users:
        if rng.random() < faults.ptr_suppressed_user_rate:
            suppressed.add(user.addr)

    loss: Dict[Ipv6Addr, float] = {}
    for text, rate in faults.loss.items():
        _validate_rate(f"loss[{text}]", rate)
        (addr,) = _parse_fault_addresses([text], "loss")
        loss[addr] = rate
    return frozenset(silent), frozenset(suppressed), loss


def _shortest_paths(graph: nx.Graph) -> Dict[tuple[str, str], tuple[str, ...]]:
    """Minimum-delay PoP paths; ties go to the lexicographically smallest PoP sequence."""
    dist = dict(nx.all_pairs_dijkstra_path_length(graph, weight="weight"))
    paths: Dict[tuple[str, str], tuple[str, ...]] = {}
    for src in sorted(graph.nodes):
        for dst in sorted(graph.nodes):
            total = dist[src][dst]
            path = [src]
            current = src
            while current != dst:
                options = sorted(
                    neighbor
                    for neighbor in graph.neighbors(current)
                    if math.isclose(
                        dist[src][current] + graph[current][neighbor]["weight"],
                        dist[src][neighbor],
                        abs_tol=1e-9,
                    )
                    and math.isclose(
                        dist[src][neighbor] + dist[neighbor][dst], total, abs_tol=1e-9
                    )
                )
                current = options[0]
                path.append(current)
            paths[(src, dst)] = tuple(path)
    return paths


def ptr_name(topology: SimTopology, addr: Ipv6Addr) -> Optional[str]:
    node = topology.find(addr)
    if node is None or addr in topology.ptr_suppressed:
        return None
    if isinstance(node, SimUser):
        return format_customer_ptr(topology.pops[node.pop].pop)
    if isinstance(node, SimRouter):
        label = f"{topology.config.router_ptr_label}{node.index + 1}"
        return format_pophost_ptr(label, topology.pops[node.pop].pop)
    if isinstance(node, SimGateway) and topology.config.gateway_ptr:
        return format_pophost_ptr(f"gw{node.index + 1}", topology.pops[node.pop].pop)
    return None
