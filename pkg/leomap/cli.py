"""Command-line entry point: gen, scan, pops, map, stats and helpers."""

from __future__ import annotations

import argparse
import csv
import ipaddress
import itertools
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, Optional, Sequence

from .addressing import (
    DEFAULT_ENUMERATION_CAP,
    USER_DELEGATION_LEN,
    AddressRole,
    Ipv6Addr,
    PrefixTooShort,
    WrongPrefixLength,
    candidate_count,
    classify,
    gateway_v6_to_v4,
    generate_candidates,
    parse_address,
)
from .backbone.cluster import DEFAULT_CLUSTER_THRESHOLD_MS
from .backbone.graph import DEFAULT_MIN_EVIDENCE, export_graph
from .config import (
    ProbePolicy,
    apply_policy_overrides,
    apply_sim_overrides,
    load_blocklist,
    load_probe_policy,
    load_sim_config,
    load_site_table,
)
from .discovery.dataset import UserRecord, load_dataset, persist
from .discovery.scan import ScanSummary, associate_pops, scan_allocations, scan_targets
from .discovery.stats import compute_stats, write_pop_table, write_stats
from .errors import InputDataError, LeomapError, UsageError
from .geoip import GeoIndex, GeoIpEntry, dump_geoip, load_geoip
from .pipeline import map_backbone
from .probe.base import ProbeAdapter
from .probe.orchestrator import DEFAULT_MAX_TTL
from .probe.registry import build_adapter, get_adapter_kinds
from .simnet.topology import SimTopology, UnknownTarget, build_sim, geoip_feed, ground_truth
from .utils import (
    Clock,
    ensure_dir,
    file_digest,
    format_utc,
    payload_digest,
    utc_now,
    utc_timestamp,
    write_json,
    write_lines,
)

DEFAULT_PROBE_CONFIG = Path("configs/probe.yaml")


class _ArgumentParser(argparse.ArgumentParser):
    """Argument errors exit with the usage code (1) instead of argparse's 2."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(UsageError.exit_code, f"{self.prog}: error: {message}\n")


@dataclass
class RunManifest:
    command: str
    adapter: str
    seed: Optional[int]
    config_digest: str
    input_digests: Dict[str, str] = field(default_factory=dict)
    started_at: str = ""
    finished_at: str = ""
    outputs: list[str] = field(default_factory=list)


@dataclass
class RunContext:
    """Everything a command needs once flags, configs and adapters are resolved."""

    args: argparse.Namespace
    out_dir: Path
    policy: ProbePolicy
    blocklist: list
    clock: Clock
    seed: int
    topology: Optional[SimTopology] = None
    inputs: Dict[str, Path] = field(default_factory=dict)

    def adapter(self, vantage: Optional[str] = None) -> ProbeAdapter:
        try:
            return build_adapter(self.args.adapter, topology=self.topology, vantage=vantage)
        except UnknownTarget as exc:
            raise UsageError(str(exc)) from exc


def _attach_file_logger(out_dir: Path) -> None:
    logger = logging.getLogger()
    log_path = out_dir / "run.log"
    for handler in logger.handlers:
        if isinstance(handler, logging.FileHandler) and Path(handler.baseFilename) == log_path.resolve():
            return
    handler = logging.FileHandler(log_path, mode="a", encoding="utf-8")
    handler.setLevel(logging.DEBUG if logger.level <= logging.DEBUG else logging.INFO)
    handler.setFormatter(logging.Formatter("[%(levelname)s] %(message)s"))
    logger.addHandler(handler)


def _detach_file_logger(out_dir: Path) -> None:
    logger = logging.getLogger()
    log_path = (out_dir / "run.log").resolve()
    for handler in list(logger.handlers):
        if isinstance(handler, logging.FileHandler) and Path(handler.baseFilename) == log_path:
            logger.removeHandler(handler)
            handler.close()


def _read_candidates(path: Path) -> list[ipaddress.IPv6Address]:
    addrs = []
    for line_no, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            addrs.append(ipaddress.IPv6Address(line))
        except ValueError as exc:
            raise InputDataError(f"{path}:{line_no}: invalid candidate {line!r}") from exc
    return addrs


def _load_feed(ctx: RunContext) -> list[GeoIpEntry]:
    path = getattr(ctx.args, "geoip", None)
    if path is not None:
        ctx.inputs["geoip"] = path
        with path.open(encoding="utf-8") as handle:
            return load_geoip(handle).entries
    if ctx.topology is not None:
        logging.info("No --geoip given; using the simulated operator feed")
        return geoip_feed(ctx.topology)
    raise UsageError("--geoip is required")


def _load_records(ctx: RunContext) -> list[UserRecord]:
    path = ctx.args.dataset
    ctx.inputs["dataset"] = path
    return load_dataset(path).records


def _parse_vantages(ctx: RunContext) -> list[tuple[str, Optional[str]]]:
    vantages: list[tuple[str, Optional[str]]] = []
    for item in ctx.args.vantage or []:
        name, _, pop = item.partition("=")
        if not name:
            raise UsageError(f"Invalid --vantage {item!r}")
        vantages.append((name, pop.lower() or None))
    if not vantages:
        raise UsageError("At least one --vantage is required")
    return vantages


def cmd_gen(ctx: RunContext) -> list[str]:
    entries = _load_feed(ctx)
    plen = ctx.args.plen
    streams: list[Iterator[Ipv6Addr]] = []
    rows: list[list[Any]] = []
    for entry in entries:
        try:
            streams.append(generate_candidates(entry.prefix, plen, cap=ctx.args.cap))
        except (PrefixTooShort, WrongPrefixLength) as exc:
            logging.warning("Allocation %s skipped: %s", entry.prefix, exc)
            rows.append([*entry.to_row(), 0, "skipped"])
            continue
        count = candidate_count(entry.prefix, plen)
        logging.info("Allocation %s (%s): %d candidates", entry.prefix, entry.city or entry.country, count)
        rows.append([*entry.to_row(), count, "ok"])
    count = write_lines(ctx.out_dir / "candidates.txt", (str(addr) for addr in itertools.chain(*streams)))
    with open(ctx.out_dir / "allocations.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["prefix", "country", "region_code", "city", "candidates", "status"])
        writer.writerows(rows)
    logging.info("Wrote %d candidates", count)
    return ["candidates.txt", "allocations.csv"]


def cmd_scan(ctx: RunContext) -> list[str]:
    entries = _load_feed(ctx)
    adapter = ctx.adapter(_first_vantage(ctx))
    summary = ScanSummary()
    if ctx.args.candidates is not None:
        ctx.inputs["candidates"] = ctx.args.candidates
        records = scan_targets(
            _read_candidates(ctx.args.candidates),
            GeoIndex(entries),
            adapter,
            ctx.policy,
            blocklist=ctx.blocklist,
            seed=ctx.seed,
            clock=ctx.clock,
            summary=summary,
        )
    else:
        records = list(
            scan_allocations(
                entries,
                adapter,
                ctx.policy,
                ctx.args.plen,
                cap=ctx.args.cap,
                blocklist=ctx.blocklist,
                seed=ctx.seed,
                clock=ctx.clock,
                summary=summary,
            )
        )
    count = persist(ctx.out_dir / "users.csv", records)
    write_json(
        ctx.out_dir / "scan_summary.json",
        {
            "allocations": len(summary.allocations),
            "candidates": summary.candidates,
            "active_users": count,
            "blocked": summary.blocked,
            "probe_errors": summary.probe_errors,
            "off_pattern": summary.off_pattern,
            "skipped_allocations": [
                {"prefix": str(item.entry.prefix), "error": item.error} for item in summary.failed
            ],
        },
    )
    logging.info("Scan found %d active users", count)
    return ["users.csv", "scan_summary.json"]


def _first_vantage(ctx: RunContext) -> Optional[str]:
    vantages = getattr(ctx.args, "vantage", None) or []
    return vantages[0].partition("=")[0] if vantages else None


def cmd_pops(ctx: RunContext) -> list[str]:
    records = _load_records(ctx)
    result = associate_pops(
        records, ctx.adapter(_first_vantage(ctx)), ctx.policy, blocklist=ctx.blocklist, seed=ctx.seed
    )
    persist(ctx.out_dir / "users.csv", result.records)
    write_pop_table(compute_stats(result.records), ctx.out_dir / "pop_summary.csv", _sites(ctx))
    write_json(ctx.out_dir / "ptr_diagnostics.json", dict(sorted(result.diagnostics.items())))
    return ["users.csv", "pop_summary.csv", "ptr_diagnostics.json"]


def _sites(ctx: RunContext) -> dict:
    path = getattr(ctx.args, "sites", None)
    if path is None or not path.exists():
        return {}
    ctx.inputs["sites"] = path
    return load_site_table(path)


def cmd_map(ctx: RunContext) -> list[str]:
    vantages = _parse_vantages(ctx)
    records = _load_records(ctx)
    adapters = []
    vantage_pops = []
    for name, pop in vantages:
        adapters.append(ctx.adapter(name))
        if pop is None and ctx.topology is not None:
            pop = ctx.topology.vantages[name].pop
        if pop is not None:
            vantage_pops.append(pop)
    result = map_backbone(
        records,
        adapters,
        ctx.policy,
        vantage_pops=vantage_pops,
        min_evidence=ctx.args.min_evidence,
        cluster_threshold_ms=ctx.args.cluster_threshold_ms,
        targets_per_pop=ctx.args.targets_per_pop,
        max_ttl=ctx.args.max_ttl,
        blocklist=ctx.blocklist,
        seed=ctx.seed,
    )
    write_json(ctx.out_dir / "graph.json", export_graph(result.graph, _sites(ctx)))
    write_json(ctx.out_dir / "coverage.json", result.coverage)
    write_json(ctx.out_dir / "routers.json", result.router_document())
    return ["graph.json", "coverage.json", "routers.json"]


def cmd_stats(ctx: RunContext) -> list[str]:
    saved = write_stats(compute_stats(_load_records(ctx)), ctx.out_dir, _sites(ctx))
    return sorted(path.name for path in saved.values())


def cmd_pipeline(ctx: RunContext) -> list[str]:
    """gen -> scan -> pops -> map -> stats, each stage in its own subdirectory."""
    root = ctx.out_dir
    outputs: list[str] = []

    def stage(name: str, func) -> None:
        ctx.out_dir = root / name
        ensure_dir(ctx.out_dir)
        logging.info("Stage %s", name)
        outputs.extend(f"{name}/{item}" for item in func(ctx))

    try:
        stage("gen", cmd_gen)
        ctx.args.candidates = root / "gen" / "candidates.txt"
        stage("scan", cmd_scan)
        ctx.args.dataset = root / "scan" / "users.csv"
        stage("pops", cmd_pops)
        ctx.args.dataset = root / "pops" / "users.csv"
        stage("map", cmd_map)
        stage("stats", cmd_stats)
    finally:
        ctx.out_dir = root
    return outputs


def cmd_sim_export(ctx: RunContext) -> list[str]:
    if ctx.topology is None:
        raise UsageError("sim-export needs --sim-config")
    write_json(ctx.out_dir / "ground_truth.json", ground_truth(ctx.topology).to_dict())
    write_lines(ctx.out_dir / "geoip.csv", dump_geoip(geoip_feed(ctx.topology)))
    return ["ground_truth.json", "geoip.csv"]


def cmd_classify(ctx: RunContext) -> list[str]:
    texts = list(ctx.args.addresses or [])
    if ctx.args.input is not None:
        ctx.inputs["input"] = ctx.args.input
        texts.extend(str(addr) for addr in _read_candidates(ctx.args.input))
    if not texts:
        raise UsageError("classify needs addresses or --input")
    rows = []
    for text in texts:
        try:
            addr = parse_address(text)
        except ValueError as exc:
            raise InputDataError(f"Invalid IPv6 address {text!r}") from exc
        role = classify(addr)
        ipv4 = ""
        if role is AddressRole.GATEWAY:
            try:
                ipv4 = str(gateway_v6_to_v4(addr))
            except ValueError as exc:
                logging.warning("%s", exc)
        rows.append([str(addr), role.value, ipv4])
        logging.info("%s %s %s", addr, role.value, ipv4 or "-")
    with open(ctx.out_dir / "classified.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["addr", "role", "ipv4"])
        writer.writerows(rows)
    return ["classified.csv"]


_COMMANDS = {
    "gen": cmd_gen,
    "scan": cmd_scan,
    "pops": cmd_pops,
    "map": cmd_map,
    "stats": cmd_stats,
    "pipeline": cmd_pipeline,
    "sim-export": cmd_sim_export,
    "classify": cmd_classify,
}
_PROBING = {"scan", "pops", "map", "pipeline"}


def build_parser() -> argparse.ArgumentParser:
    common = _ArgumentParser(add_help=False)
    common.add_argument("--out", type=Path, help="Output directory (default runs/<timestamp>)")
    common.add_argument("--seed", type=int, help="Seed for target order and the simulator")
    common.add_argument("--verbose", action="store_true", help="Debug logging")
    common.add_argument("--adapter", choices=get_adapter_kinds(), default="sim", help="Probe adapter")
    common.add_argument("--sim-config", type=Path, help="Simulator topology YAML")

    probing = _ArgumentParser(add_help=False)
    probing.add_argument(
        "--probe-config",
        type=Path,
        default=DEFAULT_PROBE_CONFIG,
        help="Probe policy YAML",
    )
    probing.add_argument("--rate", type=int, help="Probes per second")
    probing.add_argument("--timeout-ms", type=int, help="Per-probe timeout")
    probing.add_argument("--retries", type=int, help="Extra samples per traceroute hop")
    probing.add_argument("--echo-attempts", type=int, help="Echo requests per target")
    probing.add_argument("--max-in-flight", type=int, help="Outstanding probe limit")
    probing.add_argument(
        "--shuffle",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="Randomize target order (default: adapter decides)",
    )
    probing.add_argument("--blocklist", type=Path, help="Prefixes never to probe, one per line")

    feed = _ArgumentParser(add_help=False)
    feed.add_argument("--geoip", type=Path, help="GeoIP feed CSV")
    feed.add_argument("--plen", type=int, default=USER_DELEGATION_LEN, help="Sub-prefix length to enumerate")
    feed.add_argument("--cap", type=int, default=DEFAULT_ENUMERATION_CAP, help="Max candidates per allocation")

    mapping = _ArgumentParser(add_help=False)
    mapping.add_argument("--vantage", action="append", help="Vantage name, optionally name=pop (repeatable)")
    mapping.add_argument("--min-evidence", type=int, default=DEFAULT_MIN_EVIDENCE, help="Traces needed per edge")
    mapping.add_argument(
        "--cluster-threshold-ms",
        type=float,
        default=DEFAULT_CLUSTER_THRESHOLD_MS,
        help="Latency below which routers share a PoP",
    )
    mapping.add_argument("--targets-per-pop", type=int, help="Cap traceroute targets per home PoP")
    mapping.add_argument("--max-ttl", type=int, default=DEFAULT_MAX_TTL, help="Traceroute hop limit")

    sites = _ArgumentParser(add_help=False)
    sites.add_argument("--sites", type=Path, default=Path("configs/sites.csv"), help="PoP site table CSV")

    dataset = _ArgumentParser(add_help=False)
    dataset.add_argument("--dataset", type=Path, required=True, help="User dataset file")

    parser = _ArgumentParser(description="Map a satellite ISP's users, PoPs and backbone over IPv6.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common, feed], help="Enumerate user router candidates")
    scan = sub.add_parser("scan", parents=[common, probing, feed], help="Find active user routers")
    scan.add_argument("--candidates", type=Path, help="Candidate list from gen (default: enumerate the feed)")
    scan.add_argument("--vantage", action="append", help=argparse.SUPPRESS)
    pops = sub.add_parser("pops", parents=[common, probing, dataset, sites], help="Home users to PoPs via PTR")
    pops.add_argument("--vantage", action="append", help=argparse.SUPPRESS)
    sub.add_parser("map", parents=[common, probing, dataset, mapping, sites], help="Infer the PoP backbone graph")
    sub.add_parser("stats", parents=[common, dataset, sites], help="Continent, region and PoP tables")
    pipeline = sub.add_parser(
        "pipeline", parents=[common, probing, feed, mapping, sites], help="Run every stage end to end"
    )
    pipeline.set_defaults(candidates=None, dataset=None)
    sub.add_parser("sim-export", parents=[common], help="Ground truth and GeoIP feed of a sim topology")
    classify_cmd = sub.add_parser("classify", parents=[common], help="Classify addresses by role")
    classify_cmd.add_argument("addresses", nargs="*", help="IPv6 addresses")
    classify_cmd.add_argument("--input", type=Path, help="File with one address per line")
    return parser


def _resolve_policy(args: argparse.Namespace) -> ProbePolicy:
    path = getattr(args, "probe_config", None)
    policy = load_probe_policy(path)
    if path is not None and path.exists():
        logging.info("Probe config: %s", path)
    return apply_policy_overrides(
        policy,
        max_in_flight=getattr(args, "max_in_flight", None),
        rate_per_second=getattr(args, "rate", None),
        timeout_ms=getattr(args, "timeout_ms", None),
        retries=getattr(args, "retries", None),
        echo_attempts=getattr(args, "echo_attempts", None),
        randomize_order=getattr(args, "shuffle", None),
    )


def run_command(args: argparse.Namespace) -> int:
    out_dir = args.out or Path("runs") / utc_timestamp()
    ensure_dir(out_dir)
    _attach_file_logger(out_dir)
    try:
        return _run_command(args, out_dir)
    finally:
        _detach_file_logger(out_dir)


def _run_command(args: argparse.Namespace, out_dir: Path) -> int:
    logging.info("Command: %s", args.command)
    inputs: Dict[str, Path] = {}
    topology = None
    seed = args.seed if args.seed is not None else 0
    if args.sim_config is not None:
        inputs["sim_config"] = args.sim_config
        sim_config = apply_sim_overrides(load_sim_config(args.sim_config), seed=args.seed)
        seed = sim_config.seed
        topology = build_sim(sim_config)
    elif args.adapter == "sim" and (args.command in _PROBING or args.command == "sim-export"):
        raise UsageError("The sim adapter needs --sim-config")

    policy = _resolve_policy(args)
    blocklist_path = getattr(args, "blocklist", None)
    if blocklist_path is not None:
        inputs["blocklist"] = blocklist_path
    probe_config = getattr(args, "probe_config", None)
    if probe_config is not None and probe_config.exists():
        inputs["probe_config"] = probe_config

    clock: Clock = topology.clock if topology is not None and args.adapter == "sim" else utc_now
    ctx = RunContext(
        args=args,
        out_dir=out_dir,
        policy=policy,
        blocklist=load_blocklist(blocklist_path),
        clock=clock,
        seed=seed,
        topology=topology,
        inputs=inputs,
    )
    started = clock()
    outputs = _COMMANDS[args.command](ctx)
    manifest = RunManifest(
        command=args.command,
        adapter=args.adapter,
        seed=seed,
        config_digest=payload_digest(
            {
                "policy": policy.to_dict(),
                "sim": topology.config.to_dict() if topology is not None else None,
                "options": _option_snapshot(args),
            }
        ),
        input_digests={
            name: file_digest(path) for name, path in sorted(ctx.inputs.items()) if path.exists()
        },
        started_at=format_utc(started),
        finished_at=format_utc(clock()),
        outputs=sorted(outputs),
    )
    write_json(out_dir / "manifest.json", asdict(manifest))
    logging.info("Run complete: %s", out_dir)
    return 0


def _option_snapshot(args: argparse.Namespace) -> Dict[str, Any]:
    """Flags that change results; paths are covered by input digests."""
    skip = {"out", "verbose", "command"}
    return {
        key: value
        for key, value in sorted(vars(args).items())
        if key not in skip and not isinstance(value, Path)
    }


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO, format="[%(levelname)s] %(message)s")
    logging.getLogger().setLevel(logging.DEBUG if args.verbose else logging.INFO)

    try:
        return run_command(args)
    except LeomapError as exc:
        logging.error("%s", exc)
        return exc.exit_code
    except OSError as exc:
        logging.error("I/O error: %s", exc)
        return InputDataError.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
