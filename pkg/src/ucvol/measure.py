"""Baseline grid oracle, basin volumes, shape distributions and coverage reports."""
from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .atlas import ACRDescriptor, Basin, assign_acr
from .core import (
    TWO_PI,
    ConstraintSystem,
    CubeKey,
    GridSpec,
    PointSet,
    axis_angles,
    cube_indices,
    rotation_matrices,
)
from .errors import BudgetExceeded, UndefinedLevel

DEFAULT_POINT_CAP = 2_000_000_000


@dataclass
class BaselineGrid:
    """Fine-grid cells per ACR; keys are fine lattice indices of the cells."""

    grid: GridSpec
    points: dict = field(default_factory=lambda: defaultdict(set))
    mode: str = "interval"
    scanned: int = 0

    def count(self, acr: ACRDescriptor | None = None) -> int:
        if acr is not None:
            return len(self.points.get(acr, ()))
        return sum(len(v) for v in self.points.values())

    def centers(self, acr: ACRDescriptor) -> np.ndarray:
        keys = np.array(sorted(self.points.get(acr, ())), dtype=float).reshape(-1, 6)
        return self.grid.origin_array + (keys + 0.5) * self.grid.step_array

    def derived_cubes(self, coarse: GridSpec, acr: ACRDescriptor) -> set[CubeKey]:
        """Coarse cubes holding at least one fine cell of the ACR."""
        c = self.centers(acr)
        return set(map(tuple, cube_indices(c, coarse).tolist())) if len(c) else set()


def translation_box(A: PointSet, B: PointSet, sys: ConstraintSystem) -> float:
    """Half-width of the translation box that can hold a pair within its active upper bound."""
    upper = sys.matrices(A, B)["upper"].max()
    return float(upper + A.extent + B.extent)


def _axis_range(half: float, step: float, origin: float) -> tuple[int, int]:
    return int(math.floor((-half - origin) / step)), int(math.ceil((half - origin) / step))


def _lattice(A, B, sys, grid: GridSpec, box: float | None):
    half = translation_box(A, B, sys) if box is None else box
    ranges = [_axis_range(half, grid.steps[j], grid.origin[j]) for j in range(3)]
    return ranges, grid.periods


def _rot_slab(grid: GridSpec, rz_value: float, offset: float):
    """Rotation matrices for all (rx, ry) at a fixed rz; ``offset`` is 0 for lattice vertices, 0.5 for centers."""
    nx, ny, _ = grid.periods
    rx = grid.origin[3] + (np.arange(nx) + offset) * grid.steps[3]
    ry = grid.origin[4] + (np.arange(ny) + offset) * grid.steps[4]
    RX, RY = np.meshgrid(rx, ry, indexing="ij")
    ang = np.stack([RX.ravel(), RY.ravel(), np.full(RX.size, rz_value)], axis=1)
    return ang, rotation_matrices(ang)


def baseline_enumerate(A: PointSet, B: PointSet, sys: ConstraintSystem, fine_grid: GridSpec,
                       acr_filter: Iterable[ACRDescriptor] | None = None, *, mode: str = "interval",
                       box: float | None = None, max_points: int = DEFAULT_POINT_CAP) -> BaselineGrid:
    """Exhaustive scan of the fine grid.

    ``interval`` mode tests every cell center against C1 and the active
    intervals and files it under its ACR (pairs within their active upper
    bound). ``crossing`` mode targets thin ACRs: a cell belongs to an ACR
    when, for every pair of Q, the pair distance minus its target changes
    sign over the cell corners, and some corner is collision free on the
    remaining pairs. Crossing mode needs an ``acr_filter``.
    """
    ranges, periods = _lattice(A, B, sys, fine_grid, box)
    n_t = [hi - lo for lo, hi in ranges]
    total = int(np.prod(n_t)) * int(np.prod(periods))
    if total > max_points:
        raise BudgetExceeded(f"baseline grid has {total} points, cap is {max_points}")
    filt = None if acr_filter is None else sorted(set(acr_filter))
    if mode == "interval":
        out = _scan_interval(A, B, sys, fine_grid, ranges, filt)
    elif mode == "crossing":
        if not filt:
            raise ValueError("crossing mode needs the ACRs to trace")
        out = BaselineGrid(fine_grid, mode="crossing")
        for acr in filt:
            out.points[acr] = _scan_crossing(A, B, sys, fine_grid, ranges, acr)
    else:
        raise ValueError(f"unknown baseline mode {mode!r}")
    out.scanned = total
    return out


def _translations(grid: GridSpec, ranges, offset: float) -> tuple[np.ndarray, np.ndarray]:
    axes = [grid.origin[j] + (np.arange(lo, hi + (1 if offset == 0 else 0)) + offset) * grid.steps[j]
            for j, (lo, hi) in enumerate(ranges)]
    idx = [np.arange(lo, hi + (1 if offset == 0 else 0)) for lo, hi in ranges]
    T = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    I = np.stack(np.meshgrid(*idx, indexing="ij"), axis=-1).reshape(-1, 3)
    return T, I


def _scan_interval(A, B, sys, grid, ranges, filt) -> BaselineGrid:
    out = BaselineGrid(grid, mode="interval")
    m = sys.matrices(A, B)
    coll, upper = m["collision"], m["upper"]
    nA, nB = len(A), len(B)
    T, TI = _translations(grid, ranges, 0.5)
    wanted = None if filt is None else set(filt)
    nx, ny, nz = grid.periods
    rxi, ryi = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    rot_idx = np.stack([rxi.ravel(), ryi.ravel()], axis=1)
    weights = (1 << np.arange(nA * nB, dtype=np.int64)).reshape(nA, nB) if nA * nB < 63 else None
    for kz in range(nz):
        ang, R = _rot_slab(grid, grid.origin[5] + (kz + 0.5) * grid.steps[5], 0.5)
        RB = np.einsum("rij,bj->rbi", R, B.positions)  # (nr, nB, 3)
        if sys.axis_restraint is not None:
            lo, hi = sys.axis_restraint
            a = axis_angles(A, B, np.concatenate([np.zeros((len(ang), 3)), ang], axis=1))
            rot_ok = (a >= lo) & (a <= hi)
        else:
            rot_ok = np.ones(len(ang), dtype=bool)
        for r in np.flatnonzero(rot_ok):
            # d[t, a, b] = |a - R b - t|
            diff = A.positions[None, :, None, :] - RB[r][None, None, :, :] - T[:, None, None, :]
            d = np.sqrt(np.einsum("tabk,tabk->tab", diff, diff))
            ok = np.all(d >= coll, axis=(1, 2))
            inside = d <= upper
            ok &= inside.any(axis=(1, 2))
            if not ok.any():
                continue
            for t in np.flatnonzero(ok):
                desc = assign_acr(d[t], upper, A.ids, B.ids)
                if wanted is not None and desc not in wanted:
                    continue
                key = (int(TI[t, 0]), int(TI[t, 1]), int(TI[t, 2]),
                       int(rot_idx[r, 0]), int(rot_idx[r, 1]), kz)
                out.points[desc].add(key)
    return out


def _window(V: np.ndarray, axis: int, periodic: bool, op) -> np.ndarray:
    """Combine each lattice vertex with its successor along ``axis``."""
    if periodic:
        return op(V, np.roll(V, -1, axis=axis))
    sl0 = [slice(None)] * V.ndim
    sl1 = [slice(None)] * V.ndim
    sl0[axis] = slice(0, -1)
    sl1[axis] = slice(1, None)
    return op(V[tuple(sl0)], V[tuple(sl1)])


def _cell_reduce(V: np.ndarray, op) -> np.ndarray:
    """Reduce vertex values (tx, ty, tz, rx, ry) to cell values over the 2^5 corners."""
    for ax, per in ((0, False), (1, False), (2, False), (3, True), (4, True)):
        V = _window(V, ax, per, op)
    return V


def _scan_crossing(A, B, sys, grid, ranges, acr: ACRDescriptor) -> set:
    m = sys.matrices(A, B)
    coll = m["collision"]
    tgt = m["target"]
    qpairs = [(A.index_of(a), B.index_of(b)) for a, b in acr.Q]
    qset = set(qpairs)
    T, _ = _translations(grid, ranges, 0.0)
    shape_t = tuple(hi - lo + 1 for lo, hi in ranges)
    nx, ny, nz = grid.periods

    def slab(kz):
        ang, R = _rot_slab(grid, grid.origin[5] + kz * grid.steps[5], 0.0)
        RB = np.einsum("rij,bj->rbi", R, B.positions)
        signs = []
        for i, j in qpairs:
            v = A.positions[i][None, None, :] - RB[None, :, j, :] - T[:, None, :]
            d = np.sqrt(np.einsum("trk,trk->tr", v, v))
            signs.append(np.sign(d - tgt[i, j]).astype(np.int8).reshape(shape_t + (nx, ny)))
        feas = np.ones((len(T), len(ang)), dtype=bool)
        for i in range(len(A)):
            for j in range(len(B)):
                if (i, j) in qset:
                    continue
                v = A.positions[i][None, None, :] - RB[None, :, j, :] - T[:, None, :]
                feas &= np.einsum("trk,trk->tr", v, v) >= coll[i, j] ** 2
        if sys.axis_restraint is not None:
            lo, hi = sys.axis_restraint
            a = axis_angles(A, B, np.concatenate([np.zeros((len(ang), 3)), ang], axis=1))
            feas &= ((a >= lo) & (a <= hi))[None, :]
        feas = feas.reshape(shape_t + (nx, ny))
        lows = [_cell_reduce(s, np.minimum) for s in signs]
        highs = [_cell_reduce(s, np.maximum) for s in signs]
        return lows, highs, _cell_reduce(feas, np.logical_or)

    cells = set()
    first = slab(0)
    prev = first
    offs = np.array([lo for lo, _ in ranges])
    for kz in range(nz):
        nxt = first if kz == nz - 1 else slab(kz + 1)
        hit = np.logical_or(prev[2], nxt[2])
        for lo0, hi0, lo1, hi1 in zip(prev[0], prev[1], nxt[0], nxt[1]):
            hit &= (np.minimum(lo0, lo1) <= 0) & (np.maximum(hi0, hi1) >= 0)
        for idx in np.argwhere(hit):
            cells.add((int(idx[0] + offs[0]), int(idx[1] + offs[1]), int(idx[2] + offs[2]),
                       int(idx[3]), int(idx[4]), kz))
        prev = nxt
    return cells


# --- basin volumes -----------------------------------------------------------------

M_DIM = 6


def weighted_basin_volume(V, B: float) -> float:
    """``sum_k B**(5-k) * V_k`` for k = 1..5; ``V`` is a sequence (V_1..V_5) or a level mapping."""
    if isinstance(V, Mapping):
        items = [(int(k), float(v)) for k, v in V.items() if 1 <= int(k) <= M_DIM - 1]
    else:
        vals = list(V)
        if len(vals) != M_DIM - 1:
            raise ValueError("expected V_1..V_5")
        items = list(enumerate(map(float, vals), 1))
    if any(v < 0 for _, v in items):
        raise ValueError("level volumes must be non-negative")
    return float(sum(B ** (M_DIM - 1 - k) * v for k, v in items))


def level_volumes(members: Iterable[ACRDescriptor], acr_volume: Mapping[ACRDescriptor, float]) -> dict[int, float]:
    """Sum ACR volumes per energy level ``6 - |Q|``."""
    out: dict[int, float] = defaultdict(float)
    for d in members:
        out[d.energy_level] += float(acr_volume.get(d, 0))
    return dict(out)


def union_volume(basins: Iterable[Basin], acr_volume: Mapping[ACRDescriptor, float], B: float) -> float:
    """Weighted volume of the union of basins: every shared ACR counted once."""
    seen: set[ACRDescriptor] = set()
    for b in basins:
        seen.update(b.members)
    return weighted_basin_volume(level_volumes(seen, acr_volume), B)


def relative_volumes(basin_volumes: Mapping, mode: str = "sum", union: float | None = None) -> dict:
    """Per-basin ratio to the sum of basin volumes or to the union volume."""
    mode = mode.lower()
    if mode == "sum":
        den = float(sum(basin_volumes.values()))
    elif mode == "union":
        if union is None:
            raise ValueError("union mode needs the union volume")
        den = float(union)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if den == 0:
        raise ZeroDivisionError("basin volumes total zero")
    return {k: float(v) / den for k, v in basin_volumes.items()}


@dataclass(frozen=True)
class VolumeReport:
    acr_counts: dict
    basin_volumes: dict
    relative_sum: dict
    relative_union: dict
    union: float
    B: float

    def rows(self):
        for name in sorted(self.basin_volumes):
            yield name, self.basin_volumes[name], self.relative_sum[name], self.relative_union[name]


def volume_report(acr_counts: Mapping[ACRDescriptor, float], basins: Mapping[str, Basin], B: float) -> VolumeReport:
    vols = {name: weighted_basin_volume(level_volumes(b.members, acr_counts), B) for name, b in basins.items()}
    u = union_volume(basins.values(), acr_counts, B)
    total = sum(vols.values())
    rs = relative_volumes(vols, "sum") if total else {k: 0.0 for k in vols}
    ru = relative_volumes(vols, "union", u) if u else {k: 0.0 for k in vols}
    return VolumeReport(dict(acr_counts), vols, rs, ru, u, B)


# --- shape distributions -------------------------------------------------------------

@dataclass(frozen=True)
class ShapeDistribution:
    variant: int
    fractions: dict  # level k -> fraction
    undefined: tuple = ()


def _basin_levels(basin: Basin, samples) -> dict[int, float]:
    lv = level_volumes(basin.members, samples)
    return {k: lv.get(k, 0.0) for k in range(1, M_DIM)}


def shape_distribution(samples: Mapping[ACRDescriptor, float], basin: Basin, all_basins: Sequence[Basin],
                       B: float, variant: int, *, shared_once: bool = False,
                       strict: bool = False) -> ShapeDistribution:
    """Per-level share of a basin's weighted volume under one of four normalizations.

    1: raw level counts; 2: counts relative to the same level over all basins
    (shared ACRs counted per basin unless ``shared_once``); 3: relative to the
    average per-ACR count at that level; 4: relative to the average basin count
    at that level. Levels with a zero denominator are omitted and listed in
    ``undefined``; ``strict`` raises UndefinedLevel instead.
    """
    if variant not in (1, 2, 3, 4):
        raise ValueError("variant must be 1, 2, 3 or 4")
    M = _basin_levels(basin, samples)
    levels = range(1, M_DIM)
    if variant == 1:
        den = {k: 1.0 for k in levels}
    elif variant == 2:
        if shared_once:
            den = level_volumes({d for b in all_basins for d in b.members}, samples)
        else:
            den = defaultdict(float)
            for b in all_basins:
                for k, v in _basin_levels(b, samples).items():
                    den[k] += v
    elif variant == 3:
        acrs = {d for b in all_basins for d in b.members}
        den = {}
        for k in levels:
            at_k = [d for d in acrs if d.energy_level == k]
            den[k] = sum(float(samples.get(d, 0)) for d in at_k) / len(at_k) if at_k else 0.0
    else:
        per = [_basin_levels(b, samples) for b in all_basins]
        den = {k: sum(p[k] for p in per) / len(per) if per else 0.0 for k in levels}
    undefined = tuple(k for k in levels if den.get(k, 0.0) == 0)
    if undefined and strict:
        raise UndefinedLevel(f"zero denominator at level(s) {undefined}")
    w = {k: M[k] / den[k] * B ** (M_DIM - 1 - k) for k in levels if k not in undefined}
    total = sum(w.values())
    if total == 0:
        if strict:
            raise UndefinedLevel("basin has no samples on any defined level")
        return ShapeDistribution(variant, {k: 0.0 for k in w}, undefined)
    return ShapeDistribution(variant, {k: v / total for k, v in w.items()}, undefined)


# --- coverage --------------------------------------------------------------------

def gamma(baseline_count: float, sample_count: float) -> float:
    """``(baseline_count / sample_count) ** (1/6)``, exact for perfect sixth powers."""
    if baseline_count <= 0 or sample_count <= 0:
        raise ValueError("counts must be positive")
    ratio = baseline_count / sample_count
    g = ratio ** (1.0 / 6.0)
    r = round(g)
    if r > 0 and r ** 6 == ratio:
        return float(r)
    return g


def _step_units(points, grid: GridSpec, shift: np.ndarray) -> np.ndarray:
    x = (np.atleast_2d(np.asarray(points, dtype=float)).reshape(-1, 6) - grid.origin_array) / grid.step_array
    x[:, :3] -= shift
    x[:, 3:] = np.mod(x[:, 3:], np.asarray(grid.periods, dtype=float))
    return x


def _neighbour_counts(baseline, samples, g: float, grid: GridSpec) -> np.ndarray:
    baseline = np.atleast_2d(np.asarray(baseline, dtype=float)).reshape(-1, 6)
    samples = np.atleast_2d(np.asarray(samples, dtype=float)).reshape(-1, 6)
    if len(baseline) == 0:
        return np.zeros(0, dtype=int)
    if len(samples) == 0:
        return np.zeros(len(baseline), dtype=int)
    raw = np.concatenate([baseline[:, :3], samples[:, :3]]) - grid.origin_array[:3]
    tb = raw / grid.step_array[:3]
    shift = tb.min(axis=0)
    span = tb.max(axis=0) - shift
    # translations are not periodic: a box wider than any query window never wraps
    box = np.concatenate([span + 2 * g + 1.0, np.asarray(grid.periods, dtype=float)])
    bx = _step_units(baseline, grid, shift)
    sx = _step_units(samples, grid, shift)
    bx %= box
    sx %= box
    tree = cKDTree(sx, boxsize=box)
    return np.asarray(tree.query_ball_point(bx, r=g * (1 + 1e-12), p=np.inf, return_length=True), dtype=int)


@dataclass(frozen=True)
class CoverageReport:
    gamma: float
    missed: int
    total: int
    histogram: dict  # nu -> fraction of gamma-cubes holding nu samples

    @property
    def missed_ratio(self) -> float:
        return self.missed / self.total if self.total else 0.0

    @property
    def occupied_histogram(self) -> dict:
        occ = {nu: f for nu, f in self.histogram.items() if nu > 0}
        s = sum(occ.values())
        return {nu: f / s for nu, f in occ.items()} if s else {}


def coverage_error(baseline, samples, g: float, grid: GridSpec) -> float:
    """Fraction of baseline points with no sample inside their gamma-hypercube (step units, wrapped rotations)."""
    if g <= 0:
        raise ValueError("gamma must be positive")
    counts = _neighbour_counts(baseline, samples, g, grid)
    return float(np.count_nonzero(counts == 0) / len(counts)) if len(counts) else 0.0


def coverage_histogram(baseline, samples, g: float, grid: GridSpec) -> dict[int, float]:
    """Fraction of gamma-cubes (one per baseline point) holding exactly nu samples."""
    if g <= 0:
        raise ValueError("gamma must be positive")
    counts = _neighbour_counts(baseline, samples, g, grid)
    if len(counts) == 0:
        return {}
    values, freq = np.unique(counts, return_counts=True)
    return {int(v): float(f) / len(counts) for v, f in zip(values, freq)}


def coverage_report(baseline, samples, grid: GridSpec, g: float | None = None) -> CoverageReport:
    baseline = np.atleast_2d(np.asarray(baseline, dtype=float)).reshape(-1, 6)
    samples = np.atleast_2d(np.asarray(samples, dtype=float)).reshape(-1, 6)
    if g is None:
        g = gamma(len(baseline), len(samples)) if len(samples) and len(baseline) else 1.0
    counts = _neighbour_counts(baseline, samples, g, grid)
    values, freq = np.unique(counts, return_counts=True)
    hist = {int(v): float(f) / len(counts) for v, f in zip(values, freq)} if len(counts) else {}
    return CoverageReport(g, int(np.count_nonzero(counts == 0)), len(counts), hist)


# --- efficiency ------------------------------------------------------------------

def efficiency_report(results) -> list[dict]:
    """One row per (method, result): counts, timing and the frontier-to-counted ratio.

    ``results`` yields ``(method, result)`` where ``result`` is an
    ACRSampleResult or a mapping with ``acr``, ``samples``, ``wall_time``
    and optionally ``peak_frontier``.
    """
    rows = []
    for method, r in results:
        if isinstance(r, Mapping):
            acr, n, t, peak = r.get("acr"), int(r.get("samples", 0)), float(r.get("wall_time", 0.0)), r.get("peak_frontier")
        else:
            acr, n, t, peak = r.acr, r.volume, float(r.stats.get("wall_time", 0.0)), r.stats.get("peak_frontier")
        label = acr.label() if isinstance(acr, ACRDescriptor) else str(acr)
        rate = n / (t * 1e3) if n and t > 0 else 0.0
        rows.append(dict(method=str(method), acr=label, samples=n, wall_time=t,
                         samples_per_ms=rate, peak_frontier=peak,
                         frontier_ratio=(peak / n if peak is not None and n else None),
                         flagged=n == 0))
    return rows
