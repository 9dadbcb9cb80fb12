"""INI-style run configuration.

Sections and keys::

    [PointSetA]
    file = a.txt
    [PointSetB]
    file = b.txt
    [Constraint]
    activeLower = 0.75, 0
    activeUpper = 1, 0.9
    collision = 0.75, 0
    [Sampling]
    initial_Contact_1 = 0 10
    cartesianIntersectionMode = 4
    cartesianSteps = 2 2 2 18 18 18
    cayleyStep = 0.5
    [Output]
    directory = out

Rotational entries of ``cartesianSteps`` are step counts per full turn.
"""
from __future__ import annotations

import configparser
import math
import re
import warnings
from dataclasses import dataclass, field, replace

from .core import TWO_PI, BoundRule, ConstraintSystem, GridSpec
from .errors import ConfigError
from .uc.sampler import Variant

MODE_VARIANTS = {
    0: Variant.Simplicial,
    1: Variant.Basis,
    2: Variant.Thick,
    3: Variant.FaceCenter,
    4: Variant.Hybrid,
}
VARIANT_MODES = {v: k for k, v in MODE_VARIANTS.items()}

KNOWN = {
    "PointSetA": {"file"},
    "PointSetB": {"file"},
    "Constraint": {"activeLower", "activeUpper", "collision", "targetFraction", "axisRestraint"},
    "RootNodeCreation": {"dimension_of_initialContactGraphs"},
    "Sampling": {"cartesianIntersectionMode", "cartesianSteps", "cayleyStep", "gridOrigin",
                 "batch", "thickSubdivisions", "flipGate", "promoteRealized",
                 "projectMisses", "skipProcessedFaces"},
    "Basin": {"boltzmann"},
    "Baseline": {"refine", "mode", "file"},
    "MC": {"trajectory", "variants"},
    "Output": {"directory"},
    "Budget": {"maxCubes", "maxBaselinePoints"},
}
CONTACT = re.compile(r"initial_Contact_(\d+)$", re.I)
BOTTOM = re.compile(r"bottom_Contact_(\d+)$", re.I)


@dataclass(frozen=True)
class RunConfig:
    point_set_a: str = ""
    point_set_b: str = ""
    active_lower: BoundRule = BoundRule(0.75, 0.0)
    active_upper: BoundRule = BoundRule(1.0, 0.9)
    collision: BoundRule = BoundRule(0.75, 0.0)
    target_fraction: float = 0.5
    axis_restraint: tuple[float, float] | None = None
    contacts: tuple[tuple[int, int], ...] = ()
    basin_bottom: tuple[tuple[int, int], ...] = ()
    variant: Variant = Variant.Hybrid
    translation_steps: tuple[float, float, float] = (2.0, 2.0, 2.0)
    rotation_counts: tuple[int, int, int] = (18, 18, 18)
    cayley_step: float | None = None
    grid_origin: tuple[float, ...] = (0.0,) * 6
    batch: int = 64
    thick_subdivisions: int | None = None
    flip_gate: bool = True
    promote_realized: bool = True
    project_misses: bool = True
    skip_processed_faces: bool = False
    boltzmann: float | None = None
    baseline_refine: int = 2
    baseline_mode: str = "crossing"
    baseline_file: str = ""
    trajectory: str = ""
    mc_variants: tuple[str, ...] = ("MC1", "MC2", "MC3")
    output_dir: str = "out"
    max_cubes: int | None = None
    max_baseline_points: int = 2_000_000_000

    @property
    def mode(self) -> int:
        return VARIANT_MODES[self.variant]

    @property
    def grid(self) -> GridSpec:
        return GridSpec.from_counts(self.translation_steps, self.rotation_counts, self.grid_origin)

    @property
    def rotation_steps(self) -> tuple[float, float, float]:
        return tuple(TWO_PI / n for n in self.rotation_counts)

    def constraint_system(self) -> ConstraintSystem:
        return ConstraintSystem(self.active_lower, self.active_upper, self.collision,
                                self.axis_restraint, self.target_fraction)

    def sampler_options(self) -> dict:
        return dict(batch=self.batch, max_cubes=self.max_cubes, thick_subdivisions=self.thick_subdivisions,
                    flip_gate=self.flip_gate, promote_realized=self.promote_realized,
                    project_misses=self.project_misses, skip_processed_faces=self.skip_processed_faces)

    def with_overrides(self, **kw) -> "RunConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw) if kw else self


def _line_numbers(text: str) -> dict[tuple[str, str], int]:
    out, section = {}, ""
    for n, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
        elif "=" in s and not s.startswith(("#", ";")):
            out[(section.lower(), s.split("=", 1)[0].strip().lower())] = n
    return out


def _floats(s: str) -> list[float]:
    return [float(x) for x in re.split(r"[,\s]+", s.strip()) if x]


def _pair(s: str) -> tuple[int, int]:
    v = [int(x) for x in re.split(r"[,\s]+", s.strip()) if x]
    if len(v) != 2:
        raise ValueError("a contact is two point ids")
    return v[0], v[1]


def _bool(s: str) -> bool:
    t = s.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def parse_config(text: str) -> RunConfig:
    """Parse settings text; raises ConfigError listing every problem found."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError([f"malformed settings: {e}"]) from None
    lines = _line_numbers(text)
    problems: list[str] = []
    kw: dict = {}
    contacts: dict[int, tuple[int, int]] = {}
    bottom: dict[int, tuple[int, int]] = {}
    dimension = None

    def where(sec, key):
        n = lines.get((sec.lower(), key.lower()))
        return f"line {n}" if n else f"[{sec}] {key}"

    def take(sec, key, conv, target):
        try:
            kw[target] = conv(cp[sec][key])
        except (ValueError, TypeError) as e:
            problems.append(f"{where(sec, key)}: {key}: {e}")

    def rule(s):
        v = _floats(s)
        if len(v) != 2:
            raise ValueError("expected lambda, delta")
        return BoundRule(v[0], v[1])

    known_lower = {s.lower(): {k.lower() for k in keys} for s, keys in KNOWN.items()}
    for sec in cp.sections():
        for key in cp[sec]:
            if CONTACT.match(key) and sec.lower() == "sampling":
                continue
            if BOTTOM.match(key) and sec.lower() == "basin":
                continue
            if key.lower() not in known_lower.get(sec.lower(), set()):
                warnings.warn(f"{where(sec, key)}: unknown key [{sec}] {key}", stacklevel=2)

    for sec in cp.sections():
        s = cp[sec]
        low = sec.lower()
        for key in s:
            k = key.lower()
            if low == "pointseta" and k == "file":
                kw["point_set_a"] = s[key].strip()
            elif low == "pointsetb" and k == "file":
                kw["point_set_b"] = s[key].strip()
            elif low == "constraint":
                if k == "activelower":
                    take(sec, key, rule, "active_lower")
                elif k == "activeupper":
                    take(sec, key, rule, "active_upper")
                elif k == "collision":
                    take(sec, key, rule, "collision")
                elif k == "targetfraction":
                    take(sec, key, float, "target_fraction")
                elif k == "axisrestraint":
                    take(sec, key, lambda v: tuple(_floats(v)), "axis_restraint")
            elif low == "rootnodecreation" and k == "dimension_of_initialcontactgraphs":
                try:
                    dimension = int(s[key])
                except ValueError as e:
                    problems.append(f"{where(sec, key)}: {key}: {e}")
            elif low == "sampling":
                m = CONTACT.match(key)
                if m:
                    try:
                        contacts[int(m.group(1))] = _pair(s[key])
                    except ValueError as e:
                        problems.append(f"{where(sec, key)}: {key}: {e}")
                elif k == "cartesianintersectionmode":
                    try:
                        mode = int(s[key])
                        if mode not in MODE_VARIANTS:
                            raise ValueError(f"mode {mode} is not one of 0-4")
                        kw["variant"] = MODE_VARIANTS[mode]
                    except ValueError as e:
                        problems.append(f"{where(sec, key)}: {key}: {e}")
                elif k == "cartesiansteps":
                    try:
                        v = _floats(s[key])
                        if len(v) != 6:
                            raise ValueError("expected 3 translation steps and 3 rotation counts")
                        if any(x <= 0 for x in v):
                            raise ValueError("steps must be positive")
                        if any(x != int(x) for x in v[3:]):
                            raise ValueError("rotation step counts must be integers")
                        kw["translation_steps"] = tuple(v[:3])
                        kw["rotation_counts"] = tuple(int(x) for x in v[3:])
                    except ValueError as e:
                        problems.append(f"{where(sec, key)}: {key}: {e}")
                elif k == "cayleystep":
                    take(sec, key, float, "cayley_step")
                elif k == "gridorigin":
                    take(sec, key, lambda v: tuple(_floats(v)), "grid_origin")
                elif k == "batch":
                    take(sec, key, int, "batch")
                elif k == "thicksubdivisions":
                    take(sec, key, int, "thick_subdivisions")
                elif k == "flipgate":
                    take(sec, key, _bool, "flip_gate")
                elif k == "promoterealized":
                    take(sec, key, _bool, "promote_realized")
                elif k == "projectmisses":
                    take(sec, key, _bool, "project_misses")
                elif k == "skipprocessedfaces":
                    take(sec, key, _bool, "skip_processed_faces")
            elif low == "basin":
                m = BOTTOM.match(key)
                if m:
                    try:
                        bottom[int(m.group(1))] = _pair(s[key])
                    except ValueError as e:
                        problems.append(f"{where(sec, key)}: {key}: {e}")
                elif k == "boltzmann":
                    take(sec, key, float, "boltzmann")
            elif low == "baseline":
                if k == "refine":
                    take(sec, key, int, "baseline_refine")
                elif k == "mode":
                    kw["baseline_mode"] = s[key].strip().lower()
                elif k == "file":
                    kw["baseline_file"] = s[key].strip()
            elif low == "mc":
                if k == "trajectory":
                    kw["trajectory"] = s[key].strip()
                elif k == "variants":
                    kw["mc_variants"] = tuple(x for x in re.split(r"[,\s]+", s[key].strip().upper()) if x)
            elif low == "output" and k == "directory":
                kw["output_dir"] = s[key].strip()
            elif low == "budget":
                if k == "maxcubes":
                    take(sec, key, int, "max_cubes")
                elif k == "maxbaselinepoints":
                    take(sec, key, int, "max_baseline_points")

    if contacts:
        kw["contacts"] = tuple(contacts[i] for i in sorted(contacts))
    if bottom:
        kw["basin_bottom"] = tuple(bottom[i] for i in sorted(bottom))
    cfg = RunConfig(**kw)
    if dimension is not None and contacts and dimension != 6 - len(contacts):
        problems.append(f"dimension_of_initialContactGraphs is {dimension} but {len(contacts)} contacts give {6 - len(contacts)}")
    problems.extend(validate(cfg))
    if problems:
        raise ConfigError(problems)
    return cfg


def validate(cfg: RunConfig) -> list[str]:
    problems = []
    if cfg.variant is Variant.Thick and len(cfg.contacts) not in (0, 1):
        problems.append(f"the thick variant (mode 2) needs exactly one contact, got {len(cfg.contacts)}")
    if len(cfg.contacts) > 6:
        problems.append("at most 6 initial contacts")
    if len(set(cfg.contacts)) != len(cfg.contacts):
        problems.append("duplicate initial contacts")
    if cfg.basin_bottom and len(cfg.basin_bottom) != 6:
        problems.append(f"a basin bottom needs 6 contacts, got {len(cfg.basin_bottom)}")
    if any(s <= 0 for s in cfg.translation_steps) or any(n <= 0 for n in cfg.rotation_counts):
        problems.append("steps must be positive")
    if cfg.cayley_step is not None and cfg.cayley_step <= 0:
        problems.append("cayleyStep must be positive")
    if len(cfg.grid_origin) != 6:
        problems.append("gridOrigin needs 6 numbers")
    if cfg.axis_restraint is not None and len(cfg.axis_restraint) != 2:
        problems.append("axisRestraint needs lo, hi")
    if not 0 <= cfg.target_fraction <= 1:
        problems.append("targetFraction must lie in [0, 1]")
    if cfg.batch <= 0:
        problems.append("batch must be positive")
    if cfg.baseline_refine <= 0:
        problems.append("Baseline refine must be positive")
    if cfg.baseline_mode not in ("interval", "crossing"):
        problems.append(f"unknown baseline mode {cfg.baseline_mode!r}")
    bad = [v for v in cfg.mc_variants if v not in ("MC1", "MC2", "MC3")]
    if bad:
        problems.append(f"unknown MC variants {bad}")
    return problems


def _num(x: float) -> str:
    return repr(float(x))


def serialize(cfg: RunConfig) -> str:
    """Settings text that parses back to an equal RunConfig."""
    out = []

    def sec(name, items):
        items = [(k, v) for k, v in items if v is not None]
        if items:
            out.append(f"[{name}]")
            out.extend(f"{k} = {v}" for k, v in items)
            out.append("")

    rule = lambda r: f"{_num(r.lam)}, {_num(r.delta)}"
    sec("PointSetA", [("file", cfg.point_set_a or None)])
    sec("PointSetB", [("file", cfg.point_set_b or None)])
    sec("Constraint", [("activeLower", rule(cfg.active_lower)), ("activeUpper", rule(cfg.active_upper)),
                       ("collision", rule(cfg.collision)), ("targetFraction", _num(cfg.target_fraction)),
                       ("axisRestraint", None if cfg.axis_restraint is None
                        else ", ".join(map(_num, cfg.axis_restraint)))])
    sampling = [(f"initial_Contact_{i}", f"{a} {b}") for i, (a, b) in enumerate(cfg.contacts, 1)]
    sampling += [("cartesianIntersectionMode", str(cfg.mode)),
                 ("cartesianSteps", " ".join([*map(_num, cfg.translation_steps), *map(str, cfg.rotation_counts)])),
                 ("cayleyStep", None if cfg.cayley_step is None else _num(cfg.cayley_step)),
                 ("gridOrigin", " ".join(map(_num, cfg.grid_origin))),
                 ("batch", str(cfg.batch)),
                 ("thickSubdivisions", None if cfg.thick_subdivisions is None else str(cfg.thick_subdivisions)),
                 ("flipGate", str(cfg.flip_gate).lower()),
                 ("promoteRealized", str(cfg.promote_realized).lower()),
                 ("projectMisses", str(cfg.project_misses).lower()),
                 ("skipProcessedFaces", str(cfg.skip_processed_faces).lower())]
    sec("Sampling", sampling)
    basin = [(f"bottom_Contact_{i}", f"{a} {b}") for i, (a, b) in enumerate(cfg.basin_bottom, 1)]
    basin.append(("boltzmann", None if cfg.boltzmann is None else _num(cfg.boltzmann)))
    sec("Basin", basin)
    sec("Baseline", [("refine", str(cfg.baseline_refine)), ("mode", cfg.baseline_mode),
                     ("file", cfg.baseline_file or None)])
    sec("MC", [("trajectory", cfg.trajectory or None), ("variants", ", ".join(cfg.mc_variants))])
    sec("Output", [("directory", cfg.output_dir)])
    sec("Budget", [("maxCubes", None if cfg.max_cubes is None else str(cfg.max_cubes)),
                   ("maxBaselinePoints", str(cfg.max_baseline_points))])
    return "\n".join(out)
