"""Configuration models and YAML/CSV loading."""

from __future__ import annotations

import csv
import ipaddress
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Optional

import yaml

from .errors import ConfigError


@dataclass(frozen=True)
class ProbePolicy:
    max_in_flight: int = 256
    rate_per_second: int = 1000
    timeout_ms: int = 2000
    retries: int = 2
    echo_attempts: int = 3
    # None lets the adapter decide (live shuffles, sim keeps feed order).
    randomize_order: Optional[bool] = None

    def __post_init__(self) -> None:
        for name in ("max_in_flight", "rate_per_second", "timeout_ms", "echo_attempts"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"Probe policy {name} must be >= 1")
        if self.retries < 0:
            raise ConfigError("Probe policy retries must be >= 0")

    @property
    def samples_per_hop(self) -> int:
        return self.retries + 1

    def to_dict(self) -> Dict[str, Any]:
        return {
            "max_in_flight": self.max_in_flight,
            "rate_per_second": self.rate_per_second,
            "timeout_ms": self.timeout_ms,
            "retries": self.retries,
            "echo_attempts": self.echo_attempts,
            "randomize_order": self.randomize_order,
        }


def _read_yaml_mapping(path: Path, what: str) -> Dict[str, Any]:
    try:
        raw = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"Cannot read {what} {path}: {exc}") from exc
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"Invalid {what}: {path}")
    return raw


def probe_policy_from_dict(raw: Dict[str, Any]) -> ProbePolicy:
    policy_raw = raw.get("probe", raw) or {}
    randomize = policy_raw.get("randomize_order")
    return ProbePolicy(
        max_in_flight=int(policy_raw.get("max_in_flight", 256)),
        rate_per_second=int(policy_raw.get("rate_per_second", 1000)),
        timeout_ms=int(policy_raw.get("timeout_ms", 2000)),
        retries=int(policy_raw.get("retries", 2)),
        echo_attempts=int(policy_raw.get("echo_attempts", 3)),
        randomize_order=None if randomize is None else bool(randomize),
    )


def load_probe_policy(path: Optional[Path]) -> ProbePolicy:
    if path is None or not path.exists():
        return ProbePolicy()
    return probe_policy_from_dict(_read_yaml_mapping(path, "probe config"))


def apply_policy_overrides(
    policy: ProbePolicy,
    *,
    max_in_flight: Optional[int] = None,
    rate_per_second: Optional[int] = None,
    timeout_ms: Optional[int] = None,
    retries: Optional[int] = None,
    echo_attempts: Optional[int] = None,
    randomize_order: Optional[bool] = None,
) -> ProbePolicy:
    overrides = {
        "max_in_flight": max_in_flight,
        "rate_per_second": rate_per_second,
        "timeout_ms": timeout_ms,
        "retries": retries,
        "echo_attempts": echo_attempts,
        "randomize_order": randomize_order,
    }
    return replace(policy, **{key: value for key, value in overrides.items() if value is not None})


def load_blocklist(path: Optional[Path]) -> list[ipaddress.IPv6Network]:
    if path is None:
        return []
    prefixes: list[ipaddress.IPv6Network] = []
    for line_no, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            network = ipaddress.ip_network(line, strict=False)
        except ValueError as exc:
            raise ConfigError(f"{path}:{line_no}: invalid blocklist prefix {line!r}") from exc
        if isinstance(network, ipaddress.IPv6Network):
            prefixes.append(network)
    return prefixes


@dataclass(frozen=True)
class SiteRecord:
    pop: str
    label: str
    lat: Optional[float] = None
    lon: Optional[float] = None
    country: str = ""

    @property
    def has_coordinates(self) -> bool:
        return self.lat is not None and self.lon is not None


def load_site_table(path: Optional[Path]) -> Dict[str, SiteRecord]:
    if path is None:
        return {}
    sites: Dict[str, SiteRecord] = {}
    with path.open(newline="", encoding="utf-8") as handle:
        for row in csv.DictReader(handle):
            pop = (row.get("pop") or "").strip().lower()
            if not pop:
                continue
            try:
                lat = _optional_float(row.get("lat"))
                lon = _optional_float(row.get("lon"))
            except ValueError as exc:
                raise ConfigError(f"{path}: bad coordinates for {pop}: {exc}") from exc
            sites[pop] = SiteRecord(
                pop=pop,
                label=(row.get("label") or "").strip(),
                lat=lat,
                lon=lon,
                country=(row.get("country") or "").strip().upper(),
            )
    return sites


def _optional_float(value: Optional[str]) -> Optional[float]:
    if value is None or not value.strip():
        return None
    return float(value)


@dataclass
class SimPopConfig:
    code: str
    label: str = ""
    routers: int = 1


@dataclass
class SimLinkConfig:
    a: str
    b: str
    one_way_delay_ms: float


@dataclass
class SimAllocationConfig:
    prefix: str
    country: str
    region_code: str
    city: str
    pop: str
    users: int = 0
    addresses: list[str] = field(default_factory=list)


@dataclass
class SimVantageConfig:
    name: str
    pop: str
    access_delay_ms: float = 10.0


@dataclass
class SimFaultConfig:
    silent_user_rate: float = 0.0
    silent: list[str] = field(default_factory=list)
    ptr_suppressed_router_rate: float = 0.0
    ptr_suppressed_user_rate: float = 0.0
    ptr_suppressed: list[str] = field(default_factory=list)
    anonymous_hop_rate: float = 0.0
    loss_rate: float = 0.0
    loss: Dict[str, float] = field(default_factory=dict)


@dataclass
class SimConfig:
    seed: int = 0
    snapshot_time: str = "2024-11-25T00:00:00Z"
    pops: list[SimPopConfig] = field(default_factory=list)
    links: list[SimLinkConfig] = field(default_factory=list)
    allocations: list[SimAllocationConfig] = field(default_factory=list)
    vantages: list[SimVantageConfig] = field(default_factory=list)
    gateways_per_pop: int = 3
    gateway_ptr: bool = False
    router_ptr_label: str = "edge"
    user_access_delay_ms: float = 10.0
    gateway_delay_ms: float = 1.0
    intra_pop_delay_ms: float = 1.0
    mpls_inflation_ms: float = 0.0
    mpls_inflation_by_pop: Dict[str, float] = field(default_factory=dict)
    jitter_ms: float = 0.0
    faults: SimFaultConfig = field(default_factory=SimFaultConfig)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _parse_link(raw: Any) -> SimLinkConfig:
    if isinstance(raw, (list, tuple)) and len(raw) == 3:
        a, b, delay = raw
    elif isinstance(raw, dict):
        a, b, delay = raw.get("a"), raw.get("b"), raw.get("one_way_delay_ms")
    else:
        raise ConfigError(f"Invalid link entry: {raw!r}")
    if a is None or b is None or delay is None:
        raise ConfigError(f"Incomplete link entry: {raw!r}")
    return SimLinkConfig(a=str(a).lower(), b=str(b).lower(), one_way_delay_ms=float(delay))


def _sim_config_from_dict(raw: Dict[str, Any]) -> SimConfig:
    faults_raw = raw.get("faults", {}) or {}
    faults = SimFaultConfig(
        silent_user_rate=float(faults_raw.get("silent_user_rate", 0.0)),
        silent=[str(item) for item in faults_raw.get("silent", []) or []],
        ptr_suppressed_router_rate=float(faults_raw.get("ptr_suppressed_router_rate", 0.0)),
        ptr_suppressed_user_rate=float(faults_raw.get("ptr_suppressed_user_rate", 0.0)),
        ptr_suppressed=[str(item) for item in faults_raw.get("ptr_suppressed", []) or []],
        anonymous_hop_rate=float(faults_raw.get("anonymous_hop_rate", 0.0)),
        loss_rate=float(faults_raw.get("loss_rate", 0.0)),
        loss={str(k): float(v) for k, v in (faults_raw.get("loss", {}) or {}).items()},
    )
    pops = [
        SimPopConfig(
            code=str(item["code"]).lower(),
            label=str(item.get("label", "")),
            routers=int(item.get("routers", 1)),
        )
        for item in raw.get("pops", []) or []
    ]
    allocations = [
        SimAllocationConfig(
            prefix=str(item["prefix"]),
            country=str(item.get("country", "")),
            region_code=str(item.get("region_code", "")),
            city=str(item.get("city", "")),
            pop=str(item["pop"]).lower(),
            users=int(item.get("users", 0)),
            addresses=[str(addr) for addr in item.get("addresses", []) or []],
        )
        for item in raw.get("allocations", []) or []
    ]
    vantages = [
        SimVantageConfig(
            name=str(item["name"]),
            pop=str(item["pop"]).lower(),
            access_delay_ms=float(item.get("access_delay_ms", 10.0)),
        )
        for item in raw.get("vantages", []) or []
    ]
    return SimConfig(
        seed=int(raw.get("seed", 0)),
        snapshot_time=str(raw.get("snapshot_time", "2024-11-25T00:00:00Z")),
        pops=pops,
        links=[_parse_link(item) for item in raw.get("links", []) or []],
        allocations=allocations,
        vantages=vantages,
        gateways_per_pop=int(raw.get("gateways_per_pop", 3)),
        gateway_ptr=bool(raw.get("gateway_ptr", False)),
        router_ptr_label=str(raw.get("router_ptr_label", "edge")),
        user_access_delay_ms=float(raw.get("user_access_delay_ms", 10.0)),
        gateway_delay_ms=float(raw.get("gateway_delay_ms", 1.0)),
        intra_pop_delay_ms=float(raw.get("intra_pop_delay_ms", 1.0)),
        mpls_inflation_ms=float(raw.get("mpls_inflation_ms", 0.0)),
        mpls_inflation_by_pop={
            str(k).lower(): float(v)
            for k, v in (raw.get("mpls_inflation_by_pop", {}) or {}).items()
        },
        jitter_ms=float(raw.get("jitter_ms", 0.0)),
        faults=faults,
    )


def sim_config_from_dict(raw: Dict[str, Any]) -> SimConfig:
    try:
        return _sim_config_from_dict(raw)
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"Invalid sim config: {exc!r}") from exc


def load_sim_config(path: Path) -> SimConfig:
    try:
        return sim_config_from_dict(_read_yaml_mapping(path, "sim config"))
    except KeyError as exc:
        raise ConfigError(f"{path}: missing key {exc}") from exc


def apply_sim_overrides(
    config: SimConfig,
    *,
    seed: Optional[int] = None,
) -> SimConfig:
    return replace(config, seed=seed) if seed is not None else config
