"""Command line entry point: ``ucvol <command> --config settings.ini``.

Exit codes: 0 success, 2 configuration error, 3 domain error, 4 budget exceeded.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import shutil
import sys
import tempfile
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .atlas import ACRDescriptor, basin_from_bottom, estimate_boltzmann, ingest_trajectory, read_trajectory
from .config import MODE_VARIANTS, RunConfig, parse_config, serialize, validate
from .core import PointSet, read_pdb, read_point_file
from .errors import BudgetExceeded, ConfigError, UCError
from .measure import (
    baseline_enumerate,
    coverage_report,
    efficiency_report,
    level_volumes,
    shape_distribution,
    volume_report,
)
from .uc.sampler import ACRSampleResult, sample_acr

EXIT_OK, EXIT_CONFIG, EXIT_DOMAIN, EXIT_BUDGET = 0, 2, 3, 4
POSE_COLUMNS = ["tx", "ty", "tz", "rx", "ry", "rz"]
KEY_COLUMNS = ["i1", "i2", "i3", "i4", "i5", "i6"]


class MissingPrerequisite(UCError):
    """A command needs artifacts that an earlier command produces."""


def fmt(x) -> str:
    """17 significant digits so reruns can be compared byte for byte."""
    return f"{float(x):.17g}"


def flip_text(flip) -> str:
    return "".join("+" if b > 0 else "-" for b in flip)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(fmt(obj))
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def load_points(path: str, label: str) -> PointSet:
    if not path:
        raise ConfigError([f"no file given for point set {label}"])
    p = Path(path)
    return read_pdb(p, label) if p.suffix.lower() == ".pdb" else read_point_file(p, label)


def digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# --- artifact writers ------------------------------------------------------------

def write_sample_csv(path: Path, res: ACRSampleResult) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["flip", *KEY_COLUMNS, *POSE_COLUMNS])
        for flip, key, pose in res.rows():
            w.writerow([flip_text(flip), *key, *map(fmt, pose)])


def read_sample_csv(path: Path) -> tuple[list[tuple], np.ndarray]:
    keys, poses = [], []
    with path.open() as fh:
        for row in csv.DictReader(fh):
            keys.append(tuple(int(row[c]) for c in KEY_COLUMNS))
            poses.append([float(row[c]) for c in POSE_COLUMNS])
    return keys, np.array(poses, dtype=float).reshape(-1, 6)


def _stable_stats(res: ACRSampleResult) -> dict:
    return {k: v for k, v in res.stats.items() if k != "wall_time"}


# --- commands -----------------------------------------------------------------------

class Run:
    """Stages artifacts in a scratch directory and publishes them only on success."""

    def __init__(self, cfg: RunConfig, command: str):
        self.cfg, self.command = cfg, command
        self.out = Path(cfg.output_dir)
        self.inputs: dict[str, str] = {}
        self.counters: dict = {}
        self.timings: list = []

    def __enter__(self):
        self.out.mkdir(parents=True, exist_ok=True)
        self.stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=self.out))
        self.t0 = time.perf_counter()
        return self

    def path(self, rel: str) -> Path:
        p = self.stage / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def record_input(self, path) -> None:
        if path:
            self.inputs[str(path)] = digest(path)

    def __exit__(self, exc_type, exc, tb):
        ok = exc_type is None
        try:
            if ok:
                for f in sorted(self.stage.rglob("*")):
                    if f.is_file():
                        dest = self.out / f.relative_to(self.stage)
                        dest.parent.mkdir(parents=True, exist_ok=True)
                        f.replace(dest)
        finally:
            shutil.rmtree(self.stage, ignore_errors=True)
        manifest = dict(command=self.command, version=__version__, status="ok" if ok else "failed",
                        error=None if ok else f"{exc_type.__name__}: {exc}",
                        config=serialize(self.cfg), inputs=self.inputs, counters=self.counters,
                        timings=self.timings, wall_time=time.perf_counter() - self.t0)
        write_json(self.out / f"manifest_{self.command}.json", manifest)
        return False


def _points(run: Run) -> tuple[PointSet, PointSet]:
    cfg = run.cfg
    A, B = load_points(cfg.point_set_a, "A"), load_points(cfg.point_set_b, "B")
    run.record_input(cfg.point_set_a)
    run.record_input(cfg.point_set_b)
    return A, B


def _sample_one(run: Run, A, B, acr: ACRDescriptor, strict: bool) -> dict:
    cfg = run.cfg
    try:
        res = sample_acr(A, B, acr, cfg.variant, cfg.grid, cfg.cayley_step, cfg.constraint_system(),
                         strict=strict, **cfg.sampler_options())
    except BudgetExceeded:
        raise
    except UCError as e:
        if strict:
            raise
        res = ACRSampleResult(acr, cfg.variant, cfg.grid, A=A, B=B, diagnostic=f"{type(e).__name__}: {e}")
    write_sample_csv(run.path(f"acr/{acr.label()}.csv"), res)
    run.timings.append(dict(acr=acr.label(), wall_time=res.stats.get("wall_time", 0.0),
                            samples=res.volume, peak_frontier=res.stats.get("peak_frontier")))
    return dict(acr=acr.label(), level=acr.energy_level, volume=res.volume,
                diagnostic=res.diagnostic, stats=_stable_stats(res))


def cmd_sample_acr(run: Run) -> None:
    cfg = run.cfg
    if not cfg.contacts:
        raise ConfigError(["sample-acr needs initial_Contact_N entries"])
    A, B = _points(run)
    row = _sample_one(run, A, B, ACRDescriptor(cfg.contacts), strict=True)
    run.counters["counted"] = row["volume"]
    write_json(run.path("summary.json"), dict(variant=cfg.variant.value, acrs=[row]))


def _boltzmann(cfg: RunConfig, A, B) -> float:
    if cfg.boltzmann is not None:
        return cfg.boltzmann
    if cfg.trajectory:
        atlas = ingest_trajectory(read_trajectory(cfg.trajectory), A, B, cfg.constraint_system(), "MC2", cfg.grid)
        return estimate_boltzmann(atlas)
    return 1.0


def cmd_sample_basin(run: Run) -> None:
    cfg = run.cfg
    if not cfg.basin_bottom:
        raise ConfigError(["sample-basin needs six bottom_Contact_N entries in [Basin]"])
    A, B = _points(run)
    basin = basin_from_bottom(cfg.basin_bottom)
    rows = []
    for acr in basin.members:
        if len(acr) == 0:
            res = ACRSampleResult(acr, cfg.variant, cfg.grid, A=A, B=B, diagnostic="no active constraint")
            write_sample_csv(run.path(f"acr/{acr.label()}.csv"), res)
            rows.append(dict(acr=acr.label(), level=acr.energy_level, volume=0,
                             diagnostic=res.diagnostic, stats={}))
            continue
        rows.append(_sample_one(run, A, B, acr, strict=False))
    if cfg.trajectory:
        run.record_input(cfg.trajectory)
    Bf = _boltzmann(cfg, A, B)
    counts = {ACRDescriptor(m.Q): r["volume"] for m, r in zip(basin.members, rows)}
    rep = volume_report(counts, {"basin": basin}, Bf)
    run.counters.update(members=len(rows), counted=sum(r["volume"] for r in rows))
    write_json(run.path("summary.json"), dict(variant=cfg.variant.value, acrs=rows))
    write_json(run.path("volume.json"), dict(boltzmann=Bf, weighted_volume=rep.basin_volumes["basin"],
                                             level_volumes=level_volumes(basin.members, counts)))


def _baseline_acrs(cfg: RunConfig) -> list[ACRDescriptor]:
    if cfg.contacts:
        return [ACRDescriptor(cfg.contacts)]
    if cfg.basin_bottom:
        return [m for m in basin_from_bottom(cfg.basin_bottom).members if len(m)]
    return []


def cmd_baseline(run: Run) -> None:
    cfg = run.cfg
    A, B = _points(run)
    fine = cfg.grid.refine(cfg.baseline_refine)
    acrs = _baseline_acrs(cfg)
    if cfg.baseline_mode == "crossing" and not acrs:
        raise ConfigError(["crossing baseline needs contacts or a basin bottom"])
    bg = baseline_enumerate(A, B, cfg.constraint_system(), fine, acrs or None, mode=cfg.baseline_mode,
                            max_points=cfg.max_baseline_points)
    rows = []
    for acr in sorted(bg.points):
        with run.path(f"baseline/{acr.label()}.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(KEY_COLUMNS)
            w.writerows(sorted(bg.points[acr]))
        rows.append(dict(acr=acr.label(), fine_points=bg.count(acr),
                         derived_cubes=len(bg.derived_cubes(cfg.grid, acr))))
    run.counters.update(scanned=bg.scanned, feasible=bg.count())
    write_json(run.path("baseline/summary.json"),
               dict(mode=bg.mode, refine=cfg.baseline_refine, fine_steps=list(fine.steps), acrs=rows))


def cmd_mc_ingest(run: Run) -> None:
    cfg = run.cfg
    if not cfg.trajectory:
        raise ConfigError(["mc-ingest needs [MC] trajectory"])
    A, B = _points(run)
    run.record_input(cfg.trajectory)
    poses = read_trajectory(cfg.trajectory)
    summary = {}
    for v in cfg.mc_variants:
        atlas = ingest_trajectory(poses, A, B, cfg.constraint_system(), v, cfg.grid)
        with run.path(f"mc/{v}.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["acr", "level", "samples", "cubes"])
            for d, (n, c) in atlas.counts().items():
                w.writerow([d.label(), d.energy_level, n, c])
        try:
            bf = estimate_boltzmann(atlas)
        except UCError:
            bf = None
        summary[v] = dict(total=atlas.total_samples, rejected=dict(atlas.rejected), boltzmann=bf)
    run.counters["lines"] = len(poses)
    write_json(run.path("mc/summary.json"), summary)


def _descriptor_of_label(label: str) -> ACRDescriptor:
    if label == "empty":
        return ACRDescriptor(())
    return ACRDescriptor(tuple(tuple(int(x) for x in p.split("-")) for p in label.split("_")))


def cmd_measure(run: Run) -> None:
    cfg = run.cfg
    out = Path(cfg.output_dir)
    bdir = Path(cfg.baseline_file) if cfg.baseline_file else out / "baseline"
    if not (bdir / "summary.json").exists():
        raise MissingPrerequisite(f"measure needs a baseline grid in {bdir}; run the baseline command first")
    sdir = out / "acr"
    if not sdir.is_dir() or not any(sdir.glob("*.csv")):
        raise MissingPrerequisite(f"measure needs sample results in {sdir}; run sample-acr or sample-basin first")
    fine = cfg.grid.refine(cfg.baseline_refine)
    counts, cov_rows, hist_rows = {}, [], []
    for f in sorted(sdir.glob("*.csv")):
        acr = _descriptor_of_label(f.stem)
        keys, poses = read_sample_csv(f)
        counts[acr] = len(keys)
        bfile = bdir / f.name
        if not bfile.exists() or len(acr) == 0:
            continue
        fine_keys = np.loadtxt(bfile, delimiter=",", skiprows=1, ndmin=2)
        if fine_keys.size == 0:
            continue
        centers = fine.origin_array + (fine_keys + 0.5) * fine.step_array
        rep = coverage_report(centers, poses, fine) if len(poses) else None
        cov_rows.append([acr.label(), len(centers), len(poses),
                         fmt(rep.gamma) if rep else "", rep.missed if rep else len(centers),
                         fmt(rep.missed_ratio) if rep else fmt(1.0)])
        if rep:
            hist_rows.extend([acr.label(), nu, fmt(frac)] for nu, frac in sorted(rep.histogram.items()))
    with run.path("measure/coverage.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["acr", "baseline_points", "samples", "gamma", "missed", "missed_ratio"])
        w.writerows(cov_rows)
    with run.path("measure/histogram.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["acr", "nu", "fraction"])
        w.writerows(hist_rows)
    if cfg.basin_bottom:
        basin = basin_from_bottom(cfg.basin_bottom)
        vol = json.loads((out / "volume.json").read_text()) if (out / "volume.json").exists() else {}
        Bf = vol.get("boltzmann", cfg.boltzmann if cfg.boltzmann is not None else 1.0)
        rep = volume_report(counts, {"basin": basin}, Bf)
        with run.path("measure/shape.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["variant", "level", "fraction"])
            for v in (1, 2, 3, 4):
                sd = shape_distribution(counts, basin, [basin], Bf, v)
                w.writerows([v, k, fmt(x)] for k, x in sorted(sd.fractions.items()))
        write_json(run.path("measure/volume.json"),
                   dict(boltzmann=Bf, basin_volumes=rep.basin_volumes, relative_sum=rep.relative_sum,
                        relative_union=rep.relative_union, union=rep.union))
    run.timings.extend(efficiency_report(("run", dict(acr=a.label(), samples=n)) for a, n in sorted(counts.items())))
    run.counters["acrs"] = len(counts)


COMMANDS = {
    "sample-acr": cmd_sample_acr,
    "sample-basin": cmd_sample_basin,
    "baseline": cmd_baseline,
    "mc-ingest": cmd_mc_ingest,
    "measure": cmd_measure,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ucvol", description="Uniform Cartesian volume sampling of assembly ACRs.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", "-c", required=True, help="settings file")
        s.add_argument("--output", "-o", help="output directory (overrides [Output] directory)")
        s.add_argument("--mode", type=int, choices=range(5), help="intersection mode 0-4")
        s.add_argument("--cayley-step", type=float)
        s.add_argument("--boltzmann", type=float)
        s.add_argument("--trajectory")
    return p


def load_config(args) -> RunConfig:
    text = Path(args.config).read_text()
    cfg = parse_config(text)
    # input files are relative to the settings file
    here = Path(args.config).resolve().parent
    cfg = cfg.with_overrides(**{k: str(here / getattr(cfg, k)) for k in
                                ("point_set_a", "point_set_b", "trajectory", "baseline_file")
                                if getattr(cfg, k)})
    over = dict(output_dir=args.output, cayley_step=args.cayley_step,
                boltzmann=args.boltzmann, trajectory=args.trajectory)
    if args.mode is not None:
        over["variant"] = MODE_VARIANTS[args.mode]
    cfg = cfg.with_overrides(**over)
    problems = validate(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
    except ConfigError as e:
        print("configuration error:", *e.problems, sep="\n  ", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            with Run(cfg, args.command) as run:
                COMMANDS[args.command](run)
    except ConfigError as e:
        print("configuration error:", *e.problems, sep="\n  ", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetExceeded as e:
        print(f"budget exceeded: {e}", file=sys.stderr)
        return EXIT_BUDGET
    except (UCError, OSError, ValueError, KeyError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_DOMAIN
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
