import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from ucvol.cli import EXIT_BUDGET, EXIT_CONFIG, EXIT_DOMAIN, EXIT_OK, main, read_sample_csv
from ucvol.core import cube_indices
from ucvol.measure import weighted_basin_volume

A_TXT = "0 0 0 0 0.5\n1 1.6 0 0 0.5\n2 0.5 1.4 0 0.5\n"
B_TXT = "10 0.2 -0.3 0.1 0.5\n11 1.5 0.2 0 0.5\n12 0.3 1.5 0.1 0.5\n"
SETTINGS = """\
[PointSetA]
file = a.txt
[PointSetB]
file = b.txt
[Sampling]
initial_Contact_1 = 0 10
cartesianIntersectionMode = 4
cartesianSteps = 8 8 8 4 4 4
cayleyStep = 1.5
gridOrigin = 0.137 0.291 0.073 0.011 0.023 0.017
[Basin]
bottom_Contact_1 = 0 10
bottom_Contact_2 = 1 10
bottom_Contact_3 = 2 10
bottom_Contact_4 = 0 11
bottom_Contact_5 = 1 11
bottom_Contact_6 = 0 12
boltzmann = 1.068
[Baseline]
refine = 1
[Output]
directory = out
"""


def make_run(tmp_path, settings=SETTINGS, extra=""):
    (tmp_path / "a.txt").write_text(A_TXT)
    (tmp_path / "b.txt").write_text(B_TXT)
    cfg = tmp_path / "run.ini"
    cfg.write_text(settings + extra)
    return cfg


def run(cfg, command, *args):
    out = cfg.parent / "out"
    return main([command, "-c", str(cfg), "-o", str(out), *args]), out


@pytest.fixture(scope="module")
def basin_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("basin")
    cfg = make_run(d)
    rc, out = run(cfg, "sample-basin")
    return rc, out, cfg


def test_sample_basin_writes_every_member(basin_run):
    rc, out, _ = basin_run
    assert rc == EXIT_OK
    files = sorted((out / "acr").glob("*.csv"))
    assert len(files) == 64
    keys, poses = read_sample_csv(out / "acr" / "empty.csv")
    assert keys == [] and len(poses) == 0
    rows = json.loads((out / "summary.json").read_text())["acrs"]
    assert {r["acr"]: r["diagnostic"] for r in rows}["empty"] == "no active constraint"
    assert not list(out.glob(".staging-*"))


def test_sample_basin_weighted_volume(basin_run):
    _, out, _ = basin_run
    rows = json.loads((out / "summary.json").read_text())["acrs"]
    V = [sum(r["volume"] for r in rows if r["level"] == k) for k in range(1, 6)]
    vol = json.loads((out / "volume.json").read_text())
    assert vol["boltzmann"] == 1.068
    assert vol["weighted_volume"] == pytest.approx(weighted_basin_volume(V, 1.068))
    assert sum(V) > 0


def test_sample_files_hold_their_cubes(basin_run):
    _, out, cfg = basin_run
    from ucvol.config import parse_config
    grid = parse_config(cfg.read_text()).grid
    keys, poses = read_sample_csv(out / "acr" / "0-10.csv")
    assert len(keys) > 0
    assert [tuple(k) for k in cube_indices(poses, grid).tolist()] == keys


def test_manifest_records_inputs_and_status(basin_run):
    _, out, _ = basin_run
    m = json.loads((out / "manifest_sample-basin.json").read_text())
    assert m["status"] == "ok" and m["error"] is None
    assert len(m["inputs"]) == 2 and "wall_time" in m
    assert m["counters"]["members"] == 64


def test_measure_after_baseline(basin_run):
    _, out, cfg = basin_run
    assert run(cfg, "baseline")[0] == EXIT_OK
    assert run(cfg, "measure")[0] == EXIT_OK
    with (out / "measure" / "coverage.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert rows and all(0 <= float(r["missed_ratio"]) <= 1 for r in rows)
    with (out / "measure" / "shape.csv").open() as fh:
        shape = list(csv.DictReader(fh))
    for v in "1234":
        fr = [float(r["fraction"]) for r in shape if r["variant"] == v]
        assert sum(fr) == pytest.approx(1.0)


def test_sample_acr_with_mode_override(tmp_path):
    cfg = make_run(tmp_path)
    rc, out = run(cfg, "sample-acr", "--mode", "0")
    assert rc == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["variant"] == "simplicial"
    assert (out / "acr" / "0-10.csv").exists()


def test_inputs_resolve_against_settings_directory(tmp_path, monkeypatch):
    cfg = make_run(tmp_path, extra="[MC]\ntrajectory = t.txt\n")
    (tmp_path / "t.txt").write_text("3 0 0 0 0 0\n")
    monkeypatch.chdir("/")
    assert run(cfg, "mc-ingest")[0] == EXIT_OK


def test_mc_ingest_three_lines(tmp_path):
    # line 2 collides, line 3 is out of reach of every pair
    traj = "2.6 0.4 0 0 0 0\n0 0 0 0 0 0\n40 0 0 0 0 0\n"
    cfg = make_run(tmp_path, extra="[MC]\ntrajectory = t.txt\n")
    (tmp_path / "t.txt").write_text(traj)
    rc, out = run(cfg, "mc-ingest")
    assert rc == EXIT_OK
    summary = json.loads((out / "mc" / "summary.json").read_text())
    for v in ("MC1", "MC2", "MC3"):
        s = summary[v]
        assert s["total"] == 3 - sum(s["rejected"].values()) == 1
        assert s["rejected"]["collision"] == 1 and s["rejected"]["interval"] == 1
        with (out / "mc" / f"{v}.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        assert sum(int(r["samples"]) for r in rows) == 1


def test_measure_without_baseline_fails_clearly(tmp_path, capsys):
    cfg = make_run(tmp_path)
    rc, out = run(cfg, "measure")
    assert rc == EXIT_DOMAIN
    assert "baseline" in capsys.readouterr().err
    m = json.loads((out / "manifest_measure.json").read_text())
    assert m["status"] == "failed" and "MissingPrerequisite" in m["error"]


def test_failure_leaves_no_partial_outputs(tmp_path):
    cfg = make_run(tmp_path, SETTINGS.replace("initial_Contact_1 = 0 10", "initial_Contact_1 = 0 99"))
    rc, out = run(cfg, "sample-acr")
    assert rc == EXIT_DOMAIN
    assert sorted(p.name for p in out.iterdir()) == ["manifest_sample-acr.json"]


@pytest.mark.parametrize("edit", [
    lambda s: s.replace("Mode = 4", "Mode = 7"),
    lambda s: s.replace("cartesianSteps = 8 8 8 4 4 4", "cartesianSteps = 8 8"),
    lambda s: s.replace("initial_Contact_1 = 0 10", "initial_Contact_1 = 0 10\ninitial_Contact_2 = 1 11")
              .replace("Mode = 4", "Mode = 2"),
])
def test_config_errors_exit_two(tmp_path, edit, capsys):
    cfg = make_run(tmp_path, edit(SETTINGS))
    assert run(cfg, "sample-acr")[0] == EXIT_CONFIG
    assert "configuration error" in capsys.readouterr().err


def test_missing_settings_file(tmp_path):
    assert main(["sample-acr", "-c", str(tmp_path / "nope.ini")]) == EXIT_CONFIG


def test_command_specific_requirements(tmp_path):
    cfg = make_run(tmp_path, SETTINGS.split("[Basin]")[0] + "[Output]\ndirectory = out\n")
    assert run(cfg, "sample-basin")[0] == EXIT_CONFIG
    assert run(cfg, "mc-ingest")[0] == EXIT_CONFIG


def test_budget_exit_code(tmp_path):
    cfg = make_run(tmp_path, extra="[Budget]\nmaxBaselinePoints = 10\n")
    rc, out = run(cfg, "baseline")
    assert rc == EXIT_BUDGET
    assert not (out / "baseline").exists()


def test_console_script_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "ucvol.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip()
