"""Probe adapter registry."""

from __future__ import annotations

import logging
from typing import Callable, Dict, Optional

from ..errors import UsageError
from .base import ProbeAdapter


def _build_sim(topology=None, vantage: str = "", **_: object) -> ProbeAdapter:
    from .sim import SimProbeAdapter

    if topology is None:
        raise UsageError("The sim adapter needs --sim-config")
    return SimProbeAdapter(topology, vantage)


def _build_live(vantage: str = "", **_: object) -> ProbeAdapter:
    from .live import LiveProbeAdapter

    return LiveProbeAdapter(vantage=vantage or "local")


_ADAPTERS: Dict[str, Callable[..., ProbeAdapter]] = {
    "sim": _build_sim,
    "live": _build_live,
}


def get_adapter_kinds() -> list[str]:
    """Return list of registered adapter kinds."""
    return list(_ADAPTERS.keys())


def build_adapter(kind: str, *, topology=None, vantage: Optional[str] = None) -> ProbeAdapter:
    """Build a probe adapter by kind.

    Raises:
        UsageError: If the kind is not registered or its inputs are missing.
        AdapterUnavailable: If the adapter cannot run in this environment.
    """
    factory = _ADAPTERS.get(kind)
    if factory is None:
        raise UsageError(f"Unknown adapter: {kind}")
    adapter = factory(topology=topology, vantage=vantage or "")
    logging.info("Probe adapter ready: %s (vantage %s)", adapter.kind, adapter.vantage or "-")
    return adapter
