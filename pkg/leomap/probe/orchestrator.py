"""Rate-limited, bounded-parallel batch probing."""

from __future__ import annotations

import logging
import random
import threading
import time
from concurrent.futures import FIRST_COMPLETED, Future, ThreadPoolExecutor, as_completed, wait
from typing import Callable, Dict, Iterable, Iterator, Optional, Sequence

from ..addressing import Ipv6Addr, Ipv6Prefix, prefix_contains_any
from ..config import ProbePolicy
from ..errors import AdapterUnavailable
from ..utils import chunked
from .base import BatchSummary, ProbeAdapter, ProbeOp, ProbeOutcome, check_max_ttl

DEFAULT_MAX_TTL = 32
SHUFFLE_CHUNK = 1 << 16
MAX_WORKERS = 256


class TokenBucket:
    """Thread-safe token bucket; ``acquire`` blocks until a token is available."""

    def __init__(
        self,
        rate: float,
        burst: int,
        *,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        if rate <= 0 or burst < 1:
            raise ValueError("Token bucket needs rate > 0 and burst >= 1")
        self._rate = float(rate)
        self._burst = burst
        self._tokens = float(burst)
        self._clock = clock
        self._sleep = sleep
        self._last_refill = clock()
        self._lock = threading.Lock()

    @classmethod
    def for_policy(cls, policy: ProbePolicy, **kwargs) -> "TokenBucket":
        return cls(policy.rate_per_second, max(1, min(policy.rate_per_second, policy.max_in_flight)), **kwargs)

    def _refill(self) -> None:
        now = self._clock()
        elapsed = now - self._last_refill
        self._tokens = min(self._burst, self._tokens + elapsed * self._rate)
        self._last_refill = now

    def acquire(self) -> None:
        while True:
            with self._lock:
                self._refill()
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait_s = (1.0 - self._tokens) / self._rate
            self._sleep(wait_s)


def ordered_targets(targets: Iterable[Ipv6Addr], shuffle: bool, seed: int) -> Iterator[Ipv6Addr]:
    """Yield targets, shuffled within fixed-size chunks when ``shuffle`` is set."""
    if not shuffle:
        yield from targets
        return
    rng = random.Random(f"{seed}:order")
    for chunk in chunked(targets, SHUFFLE_CHUNK):
        rng.shuffle(chunk)
        yield from chunk


def probe_one(
    adapter: ProbeAdapter,
    target: Ipv6Addr,
    op: ProbeOp,
    policy: ProbePolicy,
    max_ttl: int = DEFAULT_MAX_TTL,
) -> ProbeOutcome:
    """Run one probe, turning per-target failures into an errored outcome."""
    try:
        if op is ProbeOp.ECHO:
            return ProbeOutcome(target, op, value=adapter.echo(target, policy))
        if op is ProbeOp.TRACEROUTE:
            return ProbeOutcome(target, op, value=adapter.traceroute(target, max_ttl, policy))
        answer = adapter.lookup_ptr(target, policy)
        return ProbeOutcome(target, op, value=answer.name, diagnostic=answer.diagnostic)
    except AdapterUnavailable:
        raise
    except Exception as exc:
        logging.debug("Probe %s %s failed: %s", op.value, target, exc)
        return ProbeOutcome(target, op, error=f"{type(exc).__name__}: {exc}")


def run_batch(
    adapter: ProbeAdapter,
    targets: Iterable[Ipv6Addr],
    op: ProbeOp | str,
    policy: ProbePolicy,
    *,
    blocklist: Sequence[Ipv6Prefix] = (),
    seed: int = 0,
    max_ttl: int = DEFAULT_MAX_TTL,
    summary: Optional[BatchSummary] = None,
    limiter: Optional[TokenBucket] = None,
) -> Iterator[ProbeOutcome]:
    """Probe every target once; outcomes arrive in completion order."""
    op = ProbeOp(op)
    if op is ProbeOp.TRACEROUTE:
        check_max_ttl(max_ttl)
    summary = summary if summary is not None else BatchSummary()
    limiter = limiter or TokenBucket.for_policy(policy)
    shuffle = adapter.randomize_order if policy.randomize_order is None else policy.randomize_order

    workers = min(policy.max_in_flight, MAX_WORKERS)
    with ThreadPoolExecutor(max_workers=workers, thread_name_prefix=f"probe-{op.value}") as pool:
        pending: set[Future[ProbeOutcome]] = set()
        for target in ordered_targets(targets, shuffle, seed):
            if blocklist and prefix_contains_any(target, blocklist):
                summary.blocked += 1
                continue
            while len(pending) >= policy.max_in_flight:
                done, pending = wait(pending, return_when=FIRST_COMPLETED)
                for future in done:
                    yield _collect(future, summary)
            limiter.acquire()
            pending.add(pool.submit(probe_one, adapter, target, op, policy, max_ttl))
            summary.dispatched += 1
        for future in as_completed(pending):
            yield _collect(future, summary)

    if summary.blocked:
        logging.info("Skipped %d blocklisted targets", summary.blocked)
    logging.debug(
        "Batch %s: %d dispatched, %d errors", op.value, summary.dispatched, summary.errors
    )


def _collect(future: Future[ProbeOutcome], summary: BatchSummary) -> ProbeOutcome:
    outcome = future.result()
    if not outcome.ok:
        summary.errors += 1
    if outcome.diagnostic:
        summary.diagnostics[outcome.diagnostic] = summary.diagnostics.get(outcome.diagnostic, 0) + 1
    return outcome


def probe_all(
    adapter: ProbeAdapter,
    targets: Iterable[Ipv6Addr],
    op: ProbeOp | str,
    policy: ProbePolicy,
    **kwargs: object,
) -> Dict[Ipv6Addr, ProbeOutcome]:
    """``run_batch`` collected into a mapping keyed by target."""
    return {outcome.target: outcome for outcome in run_batch(adapter, targets, op, policy, **kwargs)}  # type: ignore[arg-type]
