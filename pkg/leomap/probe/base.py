"""Probe result types and the adapter contract shared by live and simulated probing."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

from ..addressing import Ipv6Addr
from ..config import ProbePolicy


class ProbeOp(str, enum.Enum):
    ECHO = "echo"
    TRACEROUTE = "traceroute"
    PTR = "ptr"


@dataclass(frozen=True)
class HopObservation:
    ttl: int
    responder: Optional[Ipv6Addr] = None
    rtt_samples: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.ttl < 1:
            raise ValueError(f"Hop TTL must be >= 1: {self.ttl}")
        if self.responder is None and self.rtt_samples:
            raise ValueError("Anonymous hop cannot carry RTT samples")
        for sample in self.rtt_samples:
            if not math.isfinite(sample) or sample < 0:
                raise ValueError(f"Invalid RTT sample: {sample}")


@dataclass(frozen=True)
class TracerouteResult:
    target: Ipv6Addr
    hops: tuple[HopObservation, ...]
    reached: bool
    vantage: str = ""

    def __post_init__(self) -> None:
        for expected, hop in enumerate(self.hops, start=1):
            if hop.ttl != expected:
                raise ValueError(f"Hop TTLs must run 1..n without gaps, got {hop.ttl} at {expected}")
        if self.reached and (not self.hops or self.hops[-1].responder != self.target):
            raise ValueError("A reached traceroute must end at its target")

    def responders(self) -> list[Optional[Ipv6Addr]]:
        return [hop.responder for hop in self.hops]

    def final_samples(self) -> tuple[float, ...]:
        if not self.reached:
            return ()
        return self.hops[-1].rtt_samples


@dataclass(frozen=True)
class ProbeOutcome:
    """One target's result inside a batch; ``error`` is set instead of raising."""

    target: Ipv6Addr
    op: ProbeOp
    value: object = None
    error: Optional[str] = None
    diagnostic: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass(frozen=True)
class PtrAnswer:
    name: Optional[str]
    diagnostic: Optional[str] = None


class ProbeAdapter:
    """Seam between the pipeline and whatever answers probes.

    Implementations must tolerate concurrent calls from ``run_batch``.
    """

    kind: str = "abstract"
    vantage: str = ""
    randomize_order: bool = False

    def echo(self, target: Ipv6Addr, policy: ProbePolicy) -> bool:
        raise NotImplementedError

    def traceroute(
        self, target: Ipv6Addr, max_ttl: int, policy: ProbePolicy
    ) -> TracerouteResult:
        raise NotImplementedError

    def lookup_ptr(self, addr: Ipv6Addr, policy: ProbePolicy) -> PtrAnswer:
        raise NotImplementedError

    def resolve_ptr(self, addr: Ipv6Addr, policy: ProbePolicy) -> Optional[str]:
        return self.lookup_ptr(addr, policy).name


def check_max_ttl(max_ttl: int) -> None:
    if not 1 <= max_ttl <= 64:
        raise ValueError(f"max_ttl must be within 1..64: {max_ttl}")


@dataclass
class BatchSummary:
    dispatched: int = 0
    blocked: int = 0
    errors: int = 0
    diagnostics: dict[str, int] = field(default_factory=dict)
