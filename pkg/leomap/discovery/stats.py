"""Aggregate statistics over the user dataset and their CSV tables."""

from __future__ import annotations

import csv
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Dict, Iterable, Mapping, Optional

from ..config import SiteRecord
from ..continents import COUNTRY_TO_CONTINENT
from ..geoip import region_key
from ..ptrmap import PopId
from .dataset import UserRecord

UNKNOWN_CONTINENT = "Unknown"

RegionKey = tuple[str, str, str]


@dataclass(frozen=True)
class PopServiceStats:
    pop: PopId
    user_count: int
    regions: frozenset[RegionKey]

    @property
    def region_count(self) -> int:
        return len(self.regions)


@dataclass
class StatsReport:
    total_users: int = 0
    homed_users: int = 0
    continent_counts: Dict[str, int] = field(default_factory=dict)
    continent_percent: Dict[str, int] = field(default_factory=dict)
    region_counts: Dict[RegionKey, int] = field(default_factory=dict)
    region_code_counts: Dict[tuple[str, str], int] = field(default_factory=dict)
    pop_stats: Dict[str, PopServiceStats] = field(default_factory=dict)
    # region -> PoP codes serving it, for regions served by two or more PoPs
    multi_pop_regions: Dict[RegionKey, tuple[str, ...]] = field(default_factory=dict)
    pop_region_users: Dict[tuple[str, RegionKey], int] = field(default_factory=dict)


def continent_of_country(country: str) -> str:
    return COUNTRY_TO_CONTINENT.get(country, UNKNOWN_CONTINENT)


def continent_percentages(counts: Mapping[str, int]) -> Dict[str, int]:
    """Whole-number shares of the total, rounding halves away from zero."""
    total = sum(counts.values())
    if total == 0:
        return {name: 0 for name in counts}
    return {
        name: int((Decimal(100 * count) / Decimal(total)).quantize(Decimal(1), rounding=ROUND_HALF_UP))
        for name, count in counts.items()
    }


def compute_stats(records: Iterable[UserRecord]) -> StatsReport:
    continents: Counter = Counter()
    regions: Counter = Counter()
    region_codes: Counter = Counter()
    pop_users: Counter = Counter()
    pop_ids: Dict[str, PopId] = {}
    pop_regions: Dict[str, set[RegionKey]] = defaultdict(set)
    region_pops: Dict[RegionKey, set[str]] = defaultdict(set)
    pop_region_users: Counter = Counter()

    report = StatsReport()
    for record in records:
        report.total_users += 1
        key = region_key(record.geo)
        continents[continent_of_country(record.geo.country)] += 1
        regions[key] += 1
        region_codes[(record.geo.country, record.geo.region_code)] += 1
        if record.home_pop is None:
            continue
        report.homed_users += 1
        code = record.home_pop.code
        pop_ids[code] = record.home_pop
        pop_users[code] += 1
        pop_regions[code].add(key)
        region_pops[key].add(code)
        pop_region_users[(code, key)] += 1

    report.continent_counts = dict(continents)
    report.continent_percent = continent_percentages(continents)
    report.region_counts = dict(regions)
    report.region_code_counts = dict(region_codes)
    report.pop_stats = {
        code: PopServiceStats(pop_ids[code], pop_users[code], frozenset(pop_regions[code]))
        for code in sorted(pop_users)
    }
    report.multi_pop_regions = {
        key: tuple(sorted(pops)) for key, pops in sorted(region_pops.items()) if len(pops) >= 2
    }
    report.pop_region_users = dict(pop_region_users)
    return report


def pop_continent(stats: PopServiceStats, site: Optional[SiteRecord]) -> str:
    """A PoP's continent from the site table, else the plurality of the users it serves."""
    if site is not None and site.country:
        return continent_of_country(site.country)
    votes: Counter = Counter(continent_of_country(country) for country, _, _ in stats.regions)
    if not votes:
        return UNKNOWN_CONTINENT
    return sorted(votes.items(), key=lambda item: (-item[1], item[0]))[0][0]


def _write_csv(path: Path, header: list[str], rows: Iterable[list[object]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_pop_table(
    report: StatsReport,
    path: Path,
    sites: Optional[Mapping[str, SiteRecord]] = None,
) -> int:
    """Table of PoPs with users and regions served, grouped by continent."""
    sites = sites or {}
    rows = []
    for code, stats in report.pop_stats.items():
        site = sites.get(code)
        rows.append(
            [
                pop_continent(stats, site),
                code,
                site.label if site is not None and site.label else code,
                stats.user_count,
                stats.region_count,
            ]
        )
    rows.sort(key=lambda row: (row[0], -row[3], row[1]))
    _write_csv(path, ["continent", "pop", "location", "users_served", "regions_served"], rows)
    return len(rows)


def write_stats(
    report: StatsReport,
    output_dir: Path,
    sites: Optional[Mapping[str, SiteRecord]] = None,
) -> Dict[str, Path]:
    """Write the continent, region, PoP and multi-PoP tables; returns their paths."""
    sites = sites or {}
    output_dir.mkdir(parents=True, exist_ok=True)
    saved: Dict[str, Path] = {}

    saved["continents"] = output_dir / "continents.csv"
    _write_csv(
        saved["continents"],
        ["continent", "users", "percent"],
        (
            [name, count, report.continent_percent[name]]
            for name, count in sorted(report.continent_counts.items(), key=lambda item: (-item[1], item[0]))
        ),
    )

    saved["regions"] = output_dir / "regions.csv"
    _write_csv(
        saved["regions"],
        ["country", "region_code", "city", "users"],
        (
            [*key, count]
            for key, count in sorted(report.region_counts.items(), key=lambda item: (-item[1], item[0]))
        ),
    )

    saved["region_codes"] = output_dir / "region_codes.csv"
    _write_csv(
        saved["region_codes"],
        ["country", "region_code", "users"],
        (
            [*key, count]
            for key, count in sorted(report.region_code_counts.items(), key=lambda item: (-item[1], item[0]))
        ),
    )

    saved["pops"] = output_dir / "pops.csv"
    write_pop_table(report, saved["pops"], sites)

    saved["pop_regions"] = output_dir / "pop_regions.csv"
    _write_csv(
        saved["pop_regions"],
        ["pop", "country", "region_code", "city", "users"],
        ([code, *key, count] for (code, key), count in sorted(report.pop_region_users.items())),
    )

    saved["multi_pop_regions"] = output_dir / "multi_pop_regions.csv"
    _write_csv(
        saved["multi_pop_regions"],
        ["country", "region_code", "city", "pops", "users"],
        (
            [*key, ";".join(pops), report.region_counts.get(key, 0)]
            for key, pops in report.multi_pop_regions.items()
        ),
    )

    logging.info(
        "Stats: %d users (%d homed), %d regions, %d PoPs, %d multi-PoP regions",
        report.total_users,
        report.homed_users,
        len(report.region_counts),
        len(report.pop_stats),
        len(report.multi_pop_regions),
    )
    return saved
