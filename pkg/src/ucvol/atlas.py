"""ACR descriptors, basin lattices and the Monte Carlo pseudo-atlas."""
from __future__ import annotations

import itertools
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .cayley import CayleyPoint, CompleteThreeTree, FlipSignature, realize_batch
from .core import (
    BoundRule,
    ConstraintSystem,
    CubeKey,
    GridSpec,
    PointSet,
    Pose,
    axis_angles,
    cube_indices,
    place,
)
from .errors import InfeasibleSample, InsufficientData

Pair = tuple[int, int]


@dataclass(frozen=True, order=True)
class ACRDescriptor:
    Q: tuple[Pair, ...]

    def __post_init__(self):
        q = tuple(sorted((int(a), int(b)) for a, b in self.Q))
        if len(set(q)) != len(q):
            raise ValueError("duplicate pairs in Q")
        if len(q) > 6:
            raise ValueError("|Q| must be at most 6")
        object.__setattr__(self, "Q", q)

    @property
    def energy_level(self) -> int:
        return 6 - len(self.Q)

    def __len__(self):
        return len(self.Q)

    def label(self) -> str:
        return "_".join(f"{a}-{b}" for a, b in self.Q) or "empty"


@dataclass(frozen=True)
class Basin:
    bottom: ACRDescriptor
    members: tuple[ACRDescriptor, ...]
    edges: tuple[tuple[ACRDescriptor, ACRDescriptor], ...]  # (child with one more pair, parent)

    def level(self, k: int) -> list[ACRDescriptor]:
        """Members with ``|Q'| = k``."""
        return [m for m in self.members if len(m) == k]

    def __contains__(self, d: ACRDescriptor) -> bool:
        return set(d.Q) <= set(self.bottom.Q)


def basin_from_bottom(Q: Sequence[Pair]) -> Basin:
    bottom = ACRDescriptor(tuple(Q))
    if len(bottom) != 6:
        raise ValueError("a basin bottom needs exactly 6 pairs")
    members = [ACRDescriptor(sub) for k in range(7) for sub in itertools.combinations(bottom.Q, k)]
    edges = []
    for m in members:
        for p in bottom.Q:
            if p not in m.Q:
                edges.append((ACRDescriptor(m.Q + (p,)), m))
    return Basin(bottom, tuple(members), tuple(edges))


# --- MC trajectory partitioning ------------------------------------------------

MC_INNER = {
    "MC1": BoundRule(0.85, 0.0),
    "MC2": BoundRule(1.0, 0.0),
    "MC3": BoundRule(1.0, 0.8),
}


def assign_acr(d: np.ndarray, inner: np.ndarray, a_ids: Sequence[int], b_ids: Sequence[int]) -> ACRDescriptor:
    """Pairs within their inner bound; keep the 6 closest, or the closest pair if none qualify.

    Shared by the trajectory partitioner and the baseline grid assignment.
    """
    ii, jj = np.nonzero(d <= inner)
    cand = sorted((float(d[i, j]), a_ids[i], b_ids[j]) for i, j in zip(ii, jj))
    if not cand:
        i, j = np.unravel_index(np.argmin(d), d.shape)
        cand = sorted((float(d[i2, j2]), a_ids[i2], b_ids[j2])
                      for i2, j2 in zip(*np.nonzero(d == d[i, j])))[:1]
    return ACRDescriptor(tuple((a, b) for _, a, b in cand[:6]))


def partition_mc_sample(pose: Pose, A: PointSet, B: PointSet, sys: ConstraintSystem,
                        variant: str) -> ACRDescriptor:
    if variant not in MC_INNER:
        raise ValueError(f"unknown MC variant {variant!r}")
    placed = place(pose.as_array(), B.positions)[0]
    d = np.linalg.norm(A.positions[:, None, :] - placed[None, :, :], axis=2)
    ra, rb = A.radii[:, None], B.radii[None, :]
    bad = d < sys.collision_bound(ra, rb)
    if np.any(bad):
        i, j = np.argwhere(bad)[0]
        raise InfeasibleSample(f"pair ({A.ids[i]}, {B.ids[j]}) at {d[i, j]:.6g} violates the collision bound")
    return assign_acr(d, MC_INNER[variant](ra, rb), A.ids, B.ids)


@dataclass
class PseudoAtlas:
    variant: str
    samples: dict = field(default_factory=lambda: defaultdict(int))
    cubes: dict = field(default_factory=lambda: defaultdict(set))
    rejected: dict = field(default_factory=lambda: {"collision": 0, "interval": 0, "restraint": 0})

    def add(self, desc: ACRDescriptor, cube: CubeKey) -> None:
        self.samples[desc] += 1
        self.cubes[desc].add(cube)

    def merge(self, other: "PseudoAtlas") -> "PseudoAtlas":
        if other.variant != self.variant:
            raise ValueError("cannot merge atlases of different variants")
        for d, n in other.samples.items():
            self.samples[d] += n
        for d, s in other.cubes.items():
            self.cubes[d] |= s
        for k, v in other.rejected.items():
            self.rejected[k] = self.rejected.get(k, 0) + v
        return self

    def counts(self) -> dict[ACRDescriptor, tuple[int, int]]:
        return {d: (self.samples[d], len(self.cubes[d])) for d in sorted(self.samples)}

    @property
    def total_samples(self) -> int:
        return sum(self.samples.values())


def ingest_trajectory(poses, A: PointSet, B: PointSet, sys: ConstraintSystem, variant: str,
                      grid: GridSpec) -> PseudoAtlas:
    """Partition trajectory samples (``(N, 6)`` poses) into a pseudo-atlas.

    Samples outside the axis restraint are discarded before partitioning;
    collision and interval violations are tallied and skipped.
    """
    poses = np.atleast_2d(np.asarray(poses, dtype=float)).reshape(-1, 6)
    atlas = PseudoAtlas(variant)
    if len(poses) == 0:
        return atlas
    keys = cube_indices(poses, grid)
    if sys.axis_restraint is not None:
        lo, hi = sys.axis_restraint
        ang = axis_angles(A, B, poses)
        keep = (ang >= lo) & (ang <= hi)
    else:
        keep = np.ones(len(poses), dtype=bool)
    ra, rb = A.radii[:, None], B.radii[None, :]
    upper = sys.upper(ra, rb)
    for i, p in enumerate(poses):
        if not keep[i]:
            atlas.rejected["restraint"] += 1
            continue
        pose = Pose.from_array(p)
        try:
            desc = partition_mc_sample(pose, A, B, sys, variant)
        except InfeasibleSample:
            atlas.rejected["collision"] += 1
            continue
        placed = place(p, B.positions)[0]
        d = np.linalg.norm(A.positions[:, None, :] - placed[None, :, :], axis=2)
        if not np.any(d <= upper):
            atlas.rejected["interval"] += 1
            continue
        atlas.add(desc, tuple(int(x) for x in keys[i]))
    return atlas


def read_trajectory(path) -> np.ndarray:
    """Six whitespace-separated numbers per line: 3 translations then 3 rotations."""
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 6:
            raise ValueError(f"{path}:{lineno}: expected 6 numbers, got {len(parts)}")
        rows.append([float(x) for x in parts])
    return np.array(rows, dtype=float).reshape(-1, 6)


def estimate_boltzmann(atlas: PseudoAtlas) -> float:
    """Mean ratio of repetition rates (samples per occupied cube) between adjacent levels."""
    samples: dict[int, int] = defaultdict(int)
    cubes: dict[int, int] = defaultdict(int)
    for d, n in atlas.samples.items():
        samples[d.energy_level] += n
        cubes[d.energy_level] += len(atlas.cubes[d])
    rate = {lv: samples[lv] / cubes[lv] for lv in samples if cubes[lv] > 0}
    ratios = [rate[lv - 1] / rate[lv] for lv in sorted(rate) if lv - 1 in rate]
    if not ratios:
        raise InsufficientData("need samples on at least two adjacent energy levels")
    return float(np.mean(ratios))


# --- boundary children -----------------------------------------------------------

@dataclass(frozen=True)
class BoundaryContact:
    point: CayleyPoint
    pair: Pair
    child: ACRDescriptor
    gap: float
    iterations: int


def _violations(tree: CompleteThreeTree, sys: ConstraintSystem, poses):
    A, B = tree.acg.A, tree.acg.B
    placed = place(poses, B.positions)
    d = np.linalg.norm(A.positions[None, :, None, :] - placed[:, None, :, :], axis=3)
    return d - sys.matrices(A, B)["collision"][None]


def detect_boundary_contact(c_prev: CayleyPoint, c_next: CayleyPoint, flip: FlipSignature,
                            tree: CompleteThreeTree, sys: ConstraintSystem,
                            tol: float = 1e-6, max_iter: int = 60) -> BoundaryContact | None:
    """Bisect the Cayley segment to the first collision contact.

    Returns None when ``c_next`` is collision free. The returned point is on the
    feasible side, with the contacting pair within ``tol`` of its bound.
    """
    a, b = c_prev.as_array(), c_next.as_array()
    q = len(c_prev.active)
    poses, ok, _ = realize_batch(tree, np.stack([a, b]), flip)
    if not ok.all():
        raise ValueError("segment endpoints must be realizable in the given flip")
    gaps = _violations(tree, sys, poses)
    if gaps[1].min() >= 0:
        return None
    if gaps[0].min() < 0:
        raise ValueError("starting point violates the collision constraints")
    lo, hi = 0.0, 1.0
    i, j = np.unravel_index(np.argmin(gaps[1]), gaps[1].shape)
    lo_gap = gaps[0]
    it = 0
    while it < max_iter and lo_gap[i, j] > tol:
        mid = 0.5 * (lo + hi)
        p, ok, _ = realize_batch(tree, ((1 - mid) * a + mid * b)[None], flip)
        g = _violations(tree, sys, p)[0]
        it += 1
        if g.min() >= 0:
            lo, lo_gap = mid, g
        else:
            hi = mid
            i, j = np.unravel_index(np.argmin(g), g.shape)
    A, B = tree.acg.A, tree.acg.B
    pair = (A.ids[i], B.ids[j])
    point = CayleyPoint.from_array((1 - lo) * a + lo * b, q)
    child_q = set(tree.acg.Q) | {pair}
    return BoundaryContact(point, pair, ACRDescriptor(tuple(child_q)), float(lo_gap[i, j]), it)
