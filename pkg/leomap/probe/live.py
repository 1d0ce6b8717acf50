"""Live probing: ICMPv6 through scapy, PTR lookups through dnspython.

Raw ICMPv6 sockets need root or CAP_NET_RAW; the adapter checks once at
construction and raises ``AdapterUnavailable`` instead of failing per probe.
"""

from __future__ import annotations

import ipaddress
import itertools
import logging
import os
import socket
import threading
import time
from typing import Optional

from ..addressing import Ipv6Addr
from ..config import ProbePolicy
from ..errors import AdapterUnavailable
from .base import HopObservation, ProbeAdapter, PtrAnswer, TracerouteResult, check_max_ttl


def _check_raw_socket() -> None:
    try:
        sock = socket.socket(socket.AF_INET6, socket.SOCK_RAW, socket.IPPROTO_ICMPV6)
    except PermissionError as exc:
        raise AdapterUnavailable(
            "Live probing needs raw ICMPv6 sockets (run as root or grant CAP_NET_RAW)"
        ) from exc
    except OSError as exc:
        raise AdapterUnavailable(f"Cannot open a raw ICMPv6 socket: {exc}") from exc
    sock.close()


class LiveProbeAdapter(ProbeAdapter):
    kind = "live"
    randomize_order = True

    def __init__(self, vantage: str = "local", nameservers: Optional[list[str]] = None) -> None:
        try:
            import dns.resolver
            from scapy.layers.inet6 import IPv6, ICMPv6EchoReply, ICMPv6EchoRequest
            from scapy.sendrecv import sr1
        except ImportError as exc:
            raise AdapterUnavailable(f"Live adapter dependency missing: {exc.name}") from exc
        _check_raw_socket()
        self.vantage = vantage
        self._ipv6 = IPv6
        self._echo_request = ICMPv6EchoRequest
        self._echo_reply = ICMPv6EchoReply
        self._sr1 = sr1
        self._resolver = dns.resolver.Resolver()
        if nameservers:
            self._resolver.nameservers = nameservers
        # ICMPv6 echo identifiers, shared across worker threads
        self._ident = itertools.count(os.getpid() & 0xFFFF)
        self._ident_lock = threading.Lock()
        logging.info("Live adapter using resolvers %s", ", ".join(self._resolver.nameservers))

    def _next_ident(self) -> int:
        with self._ident_lock:
            return next(self._ident) & 0xFFFF

    def _send(self, target: Ipv6Addr, hop_limit: int, seq: int, policy: ProbePolicy):
        packet = self._ipv6(dst=str(target), hlim=hop_limit) / self._echo_request(
            id=self._next_ident(), seq=seq
        )
        started = time.perf_counter()
        reply = self._sr1(packet, timeout=policy.timeout_ms / 1000.0, verbose=0)
        return reply, (time.perf_counter() - started) * 1000.0

    def echo(self, target: Ipv6Addr, policy: ProbePolicy) -> bool:
        for attempt in range(policy.echo_attempts):
            reply, _ = self._send(target, 64, attempt, policy)
            if reply is not None and reply.haslayer(self._echo_reply):
                if ipaddress.IPv6Address(reply[self._ipv6].src) == target:
                    return True
        return False

    def traceroute(self, target: Ipv6Addr, max_ttl: int, policy: ProbePolicy) -> TracerouteResult:
        check_max_ttl(max_ttl)
        hops: list[HopObservation] = []
        for ttl in range(1, max_ttl + 1):
            responder: Optional[Ipv6Addr] = None
            samples: list[float] = []
            for seq in range(policy.samples_per_hop):
                reply, rtt_ms = self._send(target, ttl, seq, policy)
                if reply is None:
                    continue
                source = ipaddress.IPv6Address(reply[self._ipv6].src)
                if responder is None:
                    responder = source
                if source == responder:
                    samples.append(rtt_ms)
            hops.append(HopObservation(ttl, responder, tuple(samples)))
            if responder == target:
                return TracerouteResult(target, tuple(hops), True, self.vantage)
        return TracerouteResult(target, tuple(hops), False, self.vantage)

    def lookup_ptr(self, addr: Ipv6Addr, policy: ProbePolicy) -> PtrAnswer:
        import dns.exception
        import dns.resolver
        import dns.reversename

        query = dns.reversename.from_address(str(addr))
        try:
            answers = self._resolver.resolve(
                query, "PTR", lifetime=policy.timeout_ms / 1000.0 * (policy.retries + 1)
            )
        except dns.resolver.NXDOMAIN:
            return PtrAnswer(None, "nxdomain")
        except dns.resolver.NoAnswer:
            return PtrAnswer(None, "no-answer")
        except dns.resolver.NoNameservers:
            return PtrAnswer(None, "servfail")
        except dns.exception.Timeout:
            return PtrAnswer(None, "timeout")
        names = sorted(str(rdata.target).rstrip(".") for rdata in answers)
        return PtrAnswer(names[0] if names else None, None if names else "no-answer")
