"""Probe answering on a built topology: echo, traceroute and PTR."""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Optional

from ..addressing import Ipv6Addr
from ..probe.base import HopObservation, TracerouteResult, check_max_ttl
from .topology import SimGateway, SimRouter, SimTopology, SimUser, ptr_name


@dataclass(frozen=True)
class PathHop:
    addr: Ipv6Addr
    # cumulative one-way delay from the vantage, in ms
    delay_ms: float
    pop: str
    is_router: bool


def forward_path(topology: SimTopology, vantage: str, target: Ipv6Addr) -> list[PathHop]:
    """Hop sequence from a vantage dish to ``target``; raises UnknownTarget."""
    node = topology.locate(target)
    source = topology.vantage(vantage)
    config = topology.config

    delay = source.access_delay_ms
    hops = [PathHop(source.gateway, delay, source.pop, False)]
    if node.addr == source.gateway:
        return hops

    if isinstance(node, SimUser):
        dst_pop, last_router = node.pop, node.serving_router
    elif isinstance(node, SimRouter):
        dst_pop, last_router = node.pop, node.index
    else:
        dst_pop, last_router = node.pop, 0

    pop_path = topology.pop_path(source.pop, dst_pop)
    delay += config.gateway_delay_ms
    for position, code in enumerate(pop_path):
        if position > 0:
            delay += topology.link_delay(pop_path[position - 1], code)
        routers = topology.pops[code].routers
        upto = last_router if position == len(pop_path) - 1 else 0
        for j in range(upto + 1):
            if j > 0:
                delay += config.intra_pop_delay_ms
            hops.append(PathHop(routers[j], delay, code, True))

    if isinstance(node, SimRouter):
        return hops
    delay += config.gateway_delay_ms
    if isinstance(node, SimGateway):
        hops.append(PathHop(node.addr, delay, dst_pop, False))
        return hops
    hops.append(PathHop(node.gateway, delay, dst_pop, False))
    delay += config.user_access_delay_ms
    hops.append(PathHop(node.addr, delay, dst_pop, False))
    return hops


def _query_rng(topology: SimTopology, *key: object) -> random.Random:
    return random.Random("|".join(str(part) for part in (topology.rng_seed, *key)))


def _is_anonymous(topology: SimTopology, vantage: str, target: Ipv6Addr, ttl: int) -> bool:
    rate = topology.config.faults.anonymous_hop_rate
    if rate <= 0:
        return False
    return _query_rng(topology, "anon", vantage, target, ttl).random() < rate


def _samples(
    topology: SimTopology,
    hop: PathHop,
    final: bool,
    vantage: str,
    target: Ipv6Addr,
    ttl: int,
    count: int,
) -> tuple[float, ...]:
    rtt = 2.0 * hop.delay_ms
    if hop.is_router and not final:
        rtt += topology.inflation_for(hop.pop)
    jitter = topology.config.jitter_ms
    if jitter <= 0:
        return (rtt,) * count
    rng = _query_rng(topology, "rtt", vantage, target, ttl)
    return tuple(max(0.0, rtt + rng.uniform(-jitter, jitter)) for _ in range(count))


def answer_traceroute(
    topology: SimTopology,
    vantage: str,
    target: Ipv6Addr,
    max_ttl: int,
    samples: int = 1,
) -> TracerouteResult:
    """Synthesize a traceroute; intermediate routers carry MPLS inflation, the final hop never."""
    check_max_ttl(max_ttl)
    path = forward_path(topology, vantage, target)
    target_silent = not _responds(topology, target)

    hops: list[HopObservation] = []
    reached = False
    for ttl in range(1, max_ttl + 1):
        if ttl > len(path):
            hops.append(HopObservation(ttl))
            continue
        hop = path[ttl - 1]
        final = ttl == len(path)
        if final and target_silent:
            hops.append(HopObservation(ttl))
            continue
        if not final and _is_anonymous(topology, vantage, target, ttl):
            hops.append(HopObservation(ttl))
            continue
        hops.append(
            HopObservation(ttl, hop.addr, _samples(topology, hop, final, vantage, target, ttl, samples))
        )
        if final:
            reached = True
            break
    return TracerouteResult(target=target, hops=tuple(hops), reached=reached, vantage=vantage)


def _responds(topology: SimTopology, addr: Ipv6Addr) -> bool:
    return topology.find(addr) is not None and addr not in topology.silent


def answer_echo(topology: SimTopology, addr: Ipv6Addr, attempts: int = 1) -> bool:
    """Alive iff the address is provisioned, not silent, and one of ``attempts`` survives loss."""
    if not _responds(topology, addr):
        return False
    loss = topology.loss.get(addr, topology.config.faults.loss_rate)
    if loss <= 0:
        return True
    for attempt in range(max(1, attempts)):
        if _query_rng(topology, "echo", addr, attempt).random() >= loss:
            return True
    return False


def answer_ptr(topology: SimTopology, addr: Ipv6Addr) -> Optional[str]:
    return ptr_name(topology, addr)
