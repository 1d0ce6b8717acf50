"""IPv6 address arithmetic for the operator's addressing plan.

Bit positions follow the operator-facing convention: bit 1 is the most
significant bit of the 128-bit address and bit 128 the least significant.

- User routers: the delegated /56 plus bits 57-127 zero and bit 128 set.
- Gateways: ``<site /48>:<x>::<y>`` with x in 0x0248-0x0253 (bits 49-64),
  bits 65-116 zero and y (last 12 bits) in 0x000-0x157.  The IPv4 twin is
  ``172.16.x.y`` with the hex digit strings read as decimal.
- PoP infrastructure: the /116 blocks listed in ``DEFAULT_POP_BLOCKS``.
"""

from __future__ import annotations

import enum
import ipaddress
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

from .errors import InputDataError

Ipv6Addr = ipaddress.IPv6Address
Ipv6Prefix = ipaddress.IPv6Network

ADDRESS_BITS = 128
USER_DELEGATION_LEN = 56
DEFAULT_ENUMERATION_CAP = 1 << 24

GATEWAY_SEGMENT_MIN = 0x0248
GATEWAY_SEGMENT_MAX = 0x0253
GATEWAY_HOST_MAX = 0x157

DEFAULT_POP_BLOCKS: tuple[Ipv6Prefix, ...] = (
    ipaddress.IPv6Network("2620:134:b0ff::/116"),
    ipaddress.IPv6Network("2620:134:b004::/116"),
)

_DECIMAL_DIGITS = frozenset("0123456789")


class WrongPrefixLength(InputDataError, ValueError):
    pass


class PrefixTooShort(InputDataError, ValueError):
    """Enumerating the prefix would exceed the candidate cap; split it first."""

    def __init__(self, prefix: Ipv6Prefix, count: int, cap: int) -> None:
        super().__init__(
            f"{prefix} expands to {count} candidates (cap {cap}); chunk the allocation"
        )
        self.prefix = prefix
        self.count = count
        self.cap = cap


class NotAGateway(InputDataError, ValueError):
    pass


class NonDecimalDigits(InputDataError, ValueError):
    pass


class OctetOverflow(InputDataError, ValueError):
    pass


class OutOfRange(InputDataError, ValueError):
    pass


class AddressRole(str, enum.Enum):
    USER_ROUTER = "user_router"
    GATEWAY = "gateway"
    POP_INFRASTRUCTURE = "pop_infrastructure"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class GatewayCodecConfig:
    v6_site_prefix: Ipv6Prefix = field(
        default_factory=lambda: ipaddress.IPv6Network("2620:134:b0fe::/48")
    )
    v4_site_prefix: ipaddress.IPv4Network = field(
        default_factory=lambda: ipaddress.IPv4Network("172.16.0.0/16")
    )

    def __post_init__(self) -> None:
        if self.v6_site_prefix.prefixlen > 48:
            raise ValueError(
                f"Gateway site prefix must be /48 or shorter: {self.v6_site_prefix}"
            )
        if self.v4_site_prefix.prefixlen > 16:
            raise ValueError(
                f"Gateway IPv4 prefix must be /16 or shorter: {self.v4_site_prefix}"
            )


def parse_address(text: str) -> Ipv6Addr:
    return ipaddress.IPv6Address(text.strip())


def parse_prefix(text: str) -> Ipv6Prefix:
    """Parse a prefix, rejecting host bits set after the prefix length."""
    return ipaddress.IPv6Network(text.strip(), strict=True)


def bits(addr: Ipv6Addr, first: int, last: int) -> int:
    """Value of bits ``first..last`` (inclusive, 1 = most significant)."""
    if not 1 <= first <= last <= ADDRESS_BITS:
        raise ValueError(f"Invalid bit range {first}..{last}")
    width = last - first + 1
    return (int(addr) >> (ADDRESS_BITS - last)) & ((1 << width) - 1)


def is_user_router_address(addr: Ipv6Addr) -> bool:
    return bits(addr, 57, 128) == 1


def user_router_address(prefix56: Ipv6Prefix) -> Ipv6Addr:
    if prefix56.prefixlen != USER_DELEGATION_LEN:
        raise WrongPrefixLength(
            f"Expected a /{USER_DELEGATION_LEN} delegation, got {prefix56}"
        )
    return ipaddress.IPv6Address(int(prefix56.network_address) | 1)


def candidate_count(alloc: Ipv6Prefix, target_len: int = USER_DELEGATION_LEN) -> int:
    if not alloc.prefixlen <= target_len <= 64:
        raise WrongPrefixLength(
            f"Target length /{target_len} must lie between /{alloc.prefixlen} and /64"
        )
    return 1 << (target_len - alloc.prefixlen)


def generate_candidates(
    alloc: Ipv6Prefix,
    target_len: int = USER_DELEGATION_LEN,
    *,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> Iterator[Ipv6Addr]:
    """Yield the router address of every /target_len sub-prefix, ascending.

    The size check runs eagerly so an oversized allocation fails at the call
    site rather than on first iteration.  ``cap`` is exclusive: a /32 at /56
    (exactly 2**24 sub-prefixes) is rejected under the default.
    """
    count = candidate_count(alloc, target_len)
    if count >= cap:
        raise PrefixTooShort(alloc, count, cap)
    return _iter_candidates(int(alloc.network_address), count, ADDRESS_BITS - target_len)


def _iter_candidates(base: int, count: int, shift: int) -> Iterator[Ipv6Addr]:
    for index in range(count):
        yield ipaddress.IPv6Address(base | (index << shift) | 1)


def is_gateway_address(addr: Ipv6Addr, config: GatewayCodecConfig) -> bool:
    if addr not in config.v6_site_prefix:
        return False
    if not GATEWAY_SEGMENT_MIN <= bits(addr, 49, 64) <= GATEWAY_SEGMENT_MAX:
        return False
    if bits(addr, 65, 116) != 0:
        return False
    return bits(addr, 117, 128) <= GATEWAY_HOST_MAX


def classify(
    addr: Ipv6Addr,
    config: GatewayCodecConfig | None = None,
    pop_blocks: Iterable[Ipv6Prefix] = DEFAULT_POP_BLOCKS,
) -> AddressRole:
    config = config or GatewayCodecConfig()
    if any(addr in block for block in pop_blocks):
        return AddressRole.POP_INFRASTRUCTURE
    if is_gateway_address(addr, config):
        return AddressRole.GATEWAY
    if is_user_router_address(addr):
        return AddressRole.USER_ROUTER
    return AddressRole.UNKNOWN


def _decimal_from_hex_digits(value: int, what: str, addr: Ipv6Addr) -> int:
    digits = format(value, "x")
    if not set(digits) <= _DECIMAL_DIGITS:
        raise NonDecimalDigits(
            f"{addr}: {what} segment '{digits}' contains hex letters"
        )
    decimal = int(digits)
    if decimal > 255:
        raise OctetOverflow(f"{addr}: {what} segment '{digits}' exceeds one octet")
    return decimal


def gateway_v6_to_v4(
    addr: Ipv6Addr, config: GatewayCodecConfig | None = None
) -> ipaddress.IPv4Address:
    config = config or GatewayCodecConfig()
    if not is_gateway_address(addr, config):
        raise NotAGateway(f"{addr} does not match the gateway pattern")
    x = _decimal_from_hex_digits(bits(addr, 49, 64), "x", addr)
    y = _decimal_from_hex_digits(bits(addr, 117, 128), "y", addr)
    return ipaddress.IPv4Address(int(config.v4_site_prefix.network_address) | (x << 8) | y)


def gateway_v4_to_v6(
    addr: ipaddress.IPv4Address, config: GatewayCodecConfig | None = None
) -> Ipv6Addr:
    config = config or GatewayCodecConfig()
    if addr not in config.v4_site_prefix:
        raise OutOfRange(f"{addr} is outside {config.v4_site_prefix}")
    third, fourth = addr.packed[2], addr.packed[3]
    segment = int(str(third), 16)
    host = int(str(fourth), 16)
    if not GATEWAY_SEGMENT_MIN <= segment <= GATEWAY_SEGMENT_MAX:
        raise OutOfRange(f"{addr}: segment 0x{segment:x} outside gateway range")
    if host > GATEWAY_HOST_MAX:
        raise OutOfRange(f"{addr}: host 0x{host:x} outside gateway range")
    return gateway_address(segment, host, config)


def gateway_address(
    segment: int, host: int, config: GatewayCodecConfig | None = None
) -> Ipv6Addr:
    config = config or GatewayCodecConfig()
    base = int(config.v6_site_prefix.network_address)
    return ipaddress.IPv6Address(base | (segment << 64) | host)


def iter_valid_gateways(config: GatewayCodecConfig | None = None) -> Iterator[Ipv6Addr]:
    """Every gateway address whose x and y segments are digit-only (codec domain)."""
    config = config or GatewayCodecConfig()
    for segment in range(GATEWAY_SEGMENT_MIN, GATEWAY_SEGMENT_MAX + 1):
        if not set(format(segment, "x")) <= _DECIMAL_DIGITS:
            continue
        for host in range(GATEWAY_HOST_MAX + 1):
            if set(format(host, "x")) <= _DECIMAL_DIGITS:
                yield gateway_address(segment, host, config)


def prefix_contains_any(addr: Ipv6Addr, prefixes: Sequence[Ipv6Prefix]) -> bool:
    return any(addr in prefix for prefix in prefixes)
