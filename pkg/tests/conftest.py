from __future__ import annotations

import ipaddress
from pathlib import Path

import pytest

from leomap.config import ProbePolicy, load_sim_config, sim_config_from_dict
from leomap.simnet.topology import build_sim

REPO_ROOT = Path(__file__).resolve().parents[1]
SIM_CONFIGS = REPO_ROOT / "configs" / "sim"
SITES_CSV = REPO_ROOT / "configs" / "sites.csv"


def two_pop_config(**overrides):
    """Two PoPs one 20 ms link apart, ten users each, one vantage per PoP."""
    raw = {
        "seed": 11,
        "gateways_per_pop": 2,
        "pops": [
            {"code": "sttlwax1", "label": "Seattle"},
            {"code": "chcoilx1", "label": "Chicago"},
        ],
        "links": [["sttlwax1", "chcoilx1", 20.0]],
        "vantages": [
            {"name": "seattle", "pop": "sttlwax1", "access_delay_ms": 10.0},
            {"name": "chicago", "pop": "chcoilx1", "access_delay_ms": 10.0},
        ],
        "allocations": [
            {
                "prefix": "2605:59c8:100::/48",
                "country": "US",
                "region_code": "US-WA",
                "city": "Seattle",
                "pop": "sttlwax1",
                "users": 10,
            },
            {
                "prefix": "2605:59c8:200::/48",
                "country": "US",
                "region_code": "US-IL",
                "city": "Chicago",
                "pop": "chcoilx1",
                "users": 10,
            },
        ],
    }
    raw.update(overrides)
    return sim_config_from_dict(raw)


def line_config(inflation_ms=30.0, **overrides):
    """Three PoPs in a line (20 ms links), a multi-router PoP at the far end."""
    raw = {
        "seed": 5,
        "gateways_per_pop": 1,
        "intra_pop_delay_ms": 1.0,
        "mpls_inflation_ms": inflation_ms,
        "pops": [
            {"code": "sttlwax1"},
            {"code": "dnvrcox1"},
            {"code": "chcoilx1", "routers": 3},
        ],
        "links": [["sttlwax1", "dnvrcox1", 20.0], ["dnvrcox1", "chcoilx1", 20.0]],
        "vantages": [{"name": "seattle", "pop": "sttlwax1", "access_delay_ms": 10.0}],
        "allocations": [
            {
                "prefix": "2605:59c8:300::/48",
                "country": "US",
                "region_code": "US-IL",
                "city": "Chicago",
                "pop": "chcoilx1",
                "addresses": ["2605:59c8:300::1", "2605:59c8:301::1"],
            },
        ],
    }
    raw.update(overrides)
    return sim_config_from_dict(raw)


@pytest.fixture
def fast_policy() -> ProbePolicy:
    return ProbePolicy(max_in_flight=64, rate_per_second=1_000_000, echo_attempts=1, retries=0)


@pytest.fixture
def two_pop():
    return build_sim(two_pop_config())


@pytest.fixture
def line_topology():
    return build_sim(line_config())


@pytest.fixture
def ring_topology():
    return build_sim(load_sim_config(SIM_CONFIGS / "ring4.yaml"))


@pytest.fixture(scope="session")
def eight_pop_config():
    return load_sim_config(SIM_CONFIGS / "eight_pop.yaml")


@pytest.fixture(scope="session")
def eight_pop(eight_pop_config):
    return build_sim(eight_pop_config)


def addr(text: str) -> ipaddress.IPv6Address:
    return ipaddress.IPv6Address(text)


def net(text: str) -> ipaddress.IPv6Network:
    return ipaddress.IPv6Network(text)
