import csv
import json

import pytest

from leomap import cli
from leomap.cli import build_parser, main
from leomap.config import load_sim_config
from leomap.discovery.dataset import load_dataset
from leomap.simnet.topology import build_sim, ground_truth
from leomap.utils import write_lines

from .conftest import REPO_ROOT, SIM_CONFIGS, SITES_CSV

RING = SIM_CONFIGS / "ring4.yaml"
PROBE = ["--probe-config", str(REPO_ROOT / "configs" / "probe.yaml"), "--rate", "10000000"]


def _main(*argv):
    return main([str(arg) for arg in argv])


def _rows(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.reader(f))


def _manifest(out_dir):
    return json.loads((out_dir / "manifest.json").read_text())


@pytest.fixture
def ring_truth():
    return ground_truth(build_sim(load_sim_config(RING)))


@pytest.fixture
def seattle_feed(tmp_path):
    path = tmp_path / "feed.csv"
    path.write_text("2605:59c8::/40,US,US-WA,Seattle\n")
    return path


def test_gen_writes_every_candidate(tmp_path, seattle_feed):
    out = tmp_path / "gen"
    assert _main("gen", "--geoip", seattle_feed, "--out", out) == 0
    lines = (out / "candidates.txt").read_text().splitlines()
    assert len(lines) == 65536
    assert (lines[0], lines[1], lines[-1]) == ("2605:59c8::1", "2605:59c8:0:100::1", "2605:59c8:ff:ff00::1")
    manifest = _manifest(out)
    assert manifest["command"] == "gen"
    assert manifest["outputs"] == ["allocations.csv", "candidates.txt"]
    assert set(manifest["input_digests"]) == {"geoip"}
    assert (out / "run.log").exists()


def test_gen_streams_candidates(tmp_path, seattle_feed, monkeypatch):
    seen = []

    def recording_write_lines(path, lines):
        seen.append(lines)
        return write_lines(path, lines)

    monkeypatch.setattr(cli, "write_lines", recording_write_lines)
    out = tmp_path / "gen"
    assert _main("gen", "--geoip", seattle_feed, "--out", out) == 0
    assert len(seen) == 1
    assert not isinstance(seen[0], (list, tuple))
    assert len((out / "candidates.txt").read_text().splitlines()) == 65536


def test_gen_skips_oversized_allocations(tmp_path):
    feed = tmp_path / "feed.csv"
    feed.write_text("2605:5900::/32,US,US-WA,Seattle\n2605:59c8:100::/48,US,US-WA,Seattle\n")
    out = tmp_path / "gen"
    assert _main("gen", "--geoip", feed, "--out", out) == 0
    rows = _rows(out / "allocations.csv")
    assert [row[-2:] for row in rows[1:]] == [["0", "skipped"], ["256", "ok"]]
    assert len((out / "candidates.txt").read_text().splitlines()) == 256


def test_empty_feed_exits_with_input_error(tmp_path):
    feed = tmp_path / "feed.csv"
    feed.write_text("not-a-prefix,US,US-WA,Seattle\n")
    assert _main("gen", "--geoip", feed, "--out", tmp_path / "gen") == 2


def test_gen_needs_a_feed(tmp_path):
    assert _main("gen", "--out", tmp_path / "gen") == 1


def test_argument_errors_exit_with_usage_code():
    with pytest.raises(SystemExit) as info:
        build_parser().parse_args(["map"])
    assert info.value.code == 1


def test_sim_adapter_needs_topology(tmp_path):
    assert _main("scan", *PROBE, "--out", tmp_path / "scan") == 1


def _scan(tmp_path, *extra):
    out = tmp_path / "scan"
    assert _main("scan", "--sim-config", RING, *PROBE, "--out", out, *extra) == 0
    return out


def _pops(tmp_path, scan_out):
    out = tmp_path / "pops"
    assert (
        _main("pops", "--sim-config", RING, *PROBE, "--dataset", scan_out / "users.csv", "--sites", SITES_CSV, "--out", out)
        == 0
    )
    return out


def test_scan_finds_ground_truth(tmp_path, ring_truth):
    out = _scan(tmp_path)
    records = load_dataset(out / "users.csv").records
    assert {r.addr for r in records} == ring_truth.active_users
    summary = json.loads((out / "scan_summary.json").read_text())
    assert (summary["candidates"], summary["active_users"]) == (1024, 160)
    assert _manifest(out)["seed"] == 7


def test_scan_from_candidate_list(tmp_path, ring_truth):
    gen_out = tmp_path / "gen"
    assert _main("gen", "--sim-config", RING, "--out", gen_out) == 0
    out = _scan(tmp_path, "--candidates", gen_out / "candidates.txt")
    assert {r.addr for r in load_dataset(out / "users.csv").records} == ring_truth.active_users


def test_pops_homes_every_user(tmp_path, ring_truth):
    out = _pops(tmp_path, _scan(tmp_path))
    records = load_dataset(out / "users.csv").records
    assert all(r.home_pop.code == ring_truth.user_pops[r.addr] for r in records)
    assert json.loads((out / "ptr_diagnostics.json").read_text()) == {"homed": 160}
    rows = _rows(out / "pop_summary.csv")
    assert len(rows) == 5
    assert {row[1] for row in rows[1:]} == {"sttlwax1", "lsancax1", "dllstxx1", "chcoilx1"}


def test_map_recovers_the_ring(tmp_path, ring_truth):
    dataset = _pops(tmp_path, _scan(tmp_path)) / "users.csv"
    out = tmp_path / "map"
    code = _main(
        "map", "--sim-config", RING, *PROBE, "--dataset", dataset, "--sites", SITES_CSV,
        "--vantage", "seattle", "--vantage", "dallas", "--out", out,
    )
    assert code == 0
    graph = json.loads((out / "graph.json").read_text())
    assert {(edge["a"], edge["b"]) for edge in graph["edges"]} == set(ring_truth.pop_edges)
    for edge in graph["edges"]:
        assert edge["one_way_delay_ms"] == pytest.approx(ring_truth.pop_edges[(edge["a"], edge["b"])], abs=1.0)
        assert edge["distance_km"] > 0
    coverage = json.loads((out / "coverage.json").read_text())
    assert coverage["vantage_pops"] == ["dllstxx1", "sttlwax1"]
    routers = json.loads((out / "routers.json").read_text())["routers"]
    assert all(router["attribution"] == "ptr" for router in routers)


def test_map_vantage_errors(tmp_path):
    dataset = tmp_path / "users.csv"
    assert _main("map", "--sim-config", RING, *PROBE, "--dataset", dataset, "--out", tmp_path / "a") == 1
    dataset.write_text("#leomap-users v1\n")
    assert (
        _main("map", "--sim-config", RING, *PROBE, "--dataset", dataset, "--vantage", "nowhere", "--out", tmp_path / "b")
        == 1
    )


def test_stats_tables(tmp_path):
    dataset = _pops(tmp_path, _scan(tmp_path)) / "users.csv"
    out = tmp_path / "stats"
    assert _main("stats", "--dataset", dataset, "--sites", SITES_CSV, "--out", out) == 0
    assert _rows(out / "continents.csv") == [["continent", "users", "percent"], ["North America", "160", "100"]]
    assert len(_rows(out / "regions.csv")) == 5
    assert _manifest(out)["outputs"] == sorted(
        ["continents.csv", "regions.csv", "region_codes.csv", "pops.csv", "pop_regions.csv", "multi_pop_regions.csv"]
    )


def test_stats_on_missing_dataset(tmp_path):
    assert _main("stats", "--dataset", tmp_path / "absent.csv", "--out", tmp_path / "stats") == 2


def test_sim_export(tmp_path, ring_truth):
    out = tmp_path / "truth"
    assert _main("sim-export", "--sim-config", RING, "--out", out) == 0
    document = json.loads((out / "ground_truth.json").read_text())
    assert document == json.loads(json.dumps(ring_truth.to_dict()))
    assert len((out / "geoip.csv").read_text().splitlines()) == 4


def test_classify(tmp_path):
    out = tmp_path / "classify"
    assert _main("classify", "2620:134:b0fe:250::135", "2605:59c8::1", "2620:134:b0ff::5", "--out", out) == 0
    assert _rows(out / "classified.csv")[1:] == [
        ["2620:134:b0fe:250::135", "gateway", "172.16.250.135"],
        ["2605:59c8::1", "user_router", ""],
        ["2620:134:b0ff::5", "pop_infrastructure", ""],
    ]
    assert _main("classify", "not-an-address", "--out", tmp_path / "bad") == 2


def _pipeline(out, *extra):
    return _main(
        "pipeline", "--sim-config", RING, *PROBE, "--sites", SITES_CSV,
        "--vantage", "seattle", "--vantage", "dallas", "--out", out, *extra,
    )


def test_pipeline_is_deterministic(tmp_path):
    first, second = tmp_path / "first", tmp_path / "second"
    assert _pipeline(first) == 0
    assert _pipeline(second) == 0
    produced = sorted(p.relative_to(first) for p in first.rglob("*") if p.is_file() and p.name != "run.log")
    assert produced == sorted(p.relative_to(second) for p in second.rglob("*") if p.is_file() and p.name != "run.log")
    assert "map/graph.json" in {str(p) for p in produced}
    for relative in produced:
        assert (first / relative).read_bytes() == (second / relative).read_bytes(), relative


def test_seed_flag_overrides_sim_seed(tmp_path):
    out = _scan(tmp_path, "--seed", "8")
    assert _manifest(out)["seed"] == 8
    default = load_sim_config(RING)
    assert {r.addr for r in load_dataset(out / "users.csv").records} != ground_truth(build_sim(default)).active_users
