"""Probe adapter answering from a simulated topology."""

from __future__ import annotations

from ..addressing import Ipv6Addr
from ..config import ProbePolicy
from ..simnet.answer import answer_echo, answer_ptr, answer_traceroute
from ..simnet.topology import SimTopology, UnknownTarget
from .base import HopObservation, ProbeAdapter, PtrAnswer, TracerouteResult, check_max_ttl


class SimProbeAdapter(ProbeAdapter):
    kind = "sim"
    randomize_order = False

    def __init__(self, topology: SimTopology, vantage: str = "") -> None:
        self.topology = topology
        vantage = vantage or next(iter(topology.vantages), "")
        if vantage:
            topology.vantage(vantage)
        self.vantage = vantage

    def echo(self, target: Ipv6Addr, policy: ProbePolicy) -> bool:
        return answer_echo(self.topology, target, policy.echo_attempts)

    def traceroute(self, target: Ipv6Addr, max_ttl: int, policy: ProbePolicy) -> TracerouteResult:
        check_max_ttl(max_ttl)
        if not self.vantage:
            raise UnknownTarget("Simulated traceroute needs a vantage")
        try:
            return answer_traceroute(
                self.topology, self.vantage, target, max_ttl, samples=policy.samples_per_hop
            )
        except UnknownTarget:
            hops = tuple(HopObservation(ttl) for ttl in range(1, max_ttl + 1))
            return TracerouteResult(target=target, hops=hops, reached=False, vantage=self.vantage)

    def lookup_ptr(self, addr: Ipv6Addr, policy: ProbePolicy) -> PtrAnswer:
        name = answer_ptr(self.topology, addr)
        return PtrAnswer(name, None if name is not None else "nxdomain")
