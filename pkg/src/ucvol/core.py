"""Geometric primitives: point sets, poses, pair constraints and the 6-D pose grid.

Poses place point set B relative to the fixed set A. A pose is a translation
plus three Tait-Bryan angles ``(rx, ry, rz)`` with ``R = Rz(rz) @ Ry(ry) @ Rx(rx)``,
every angle wrapped to ``[0, 2*pi)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateSet

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class Point:
    id: int
    position: tuple[float, float, float]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"point {self.id}: radius must be positive, got {self.radius}")
        if not all(math.isfinite(c) for c in self.position):
            raise ValueError(f"point {self.id}: non-finite position {self.position}")


@dataclass(frozen=True)
class PointSet:
    label: str
    points: tuple[Point, ...]

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        ids = [p.id for p in self.points]
        if len(set(ids)) != len(ids):
            raise ValueError(f"point set {self.label}: duplicate point ids")
        if not self.points:
            raise ValueError(f"point set {self.label}: empty")

    @property
    def is_rigid_frame(self) -> bool:
        """True when the set has 3 or more non-collinear points (a pose is recoverable)."""
        if len(self.points) < 3:
            return False
        centered = self.positions - self.positions.mean(axis=0)
        return np.linalg.matrix_rank(centered, tol=1e-9) >= 2

    @classmethod
    def from_arrays(cls, label, positions, radii, ids=None) -> "PointSet":
        positions = np.asarray(positions, dtype=float)
        radii = np.broadcast_to(np.asarray(radii, dtype=float), (len(positions),))
        if ids is None:
            ids = range(len(positions))
        return cls(label, tuple(Point(int(i), tuple(map(float, p)), float(r))
                                for i, p, r in zip(ids, positions, radii)))

    @cached_property
    def positions(self) -> np.ndarray:
        return np.array([p.position for p in self.points], dtype=float)

    @cached_property
    def radii(self) -> np.ndarray:
        return np.array([p.radius for p in self.points], dtype=float)

    @cached_property
    def ids(self) -> tuple[int, ...]:
        return tuple(p.id for p in self.points)

    @cached_property
    def _index(self) -> dict[int, int]:
        return {pid: i for i, pid in enumerate(self.ids)}

    def index_of(self, pid: int) -> int:
        try:
            return self._index[pid]
        except KeyError:
            raise KeyError(f"point id {pid} not in set {self.label}") from None

    def __len__(self):
        return len(self.points)

    @cached_property
    def principal_axis(self) -> np.ndarray:
        return _principal_axis(self.positions)

    @cached_property
    def extent(self) -> float:
        """Largest distance from the origin of the template frame to any point."""
        return float(np.max(np.linalg.norm(self.positions, axis=1)))


def _principal_axis(positions: np.ndarray) -> np.ndarray:
    centered = positions - positions.mean(axis=0)
    cov = centered.T @ centered / len(positions)
    vals, vecs = np.linalg.eigh(cov)
    if vals[2] - vals[1] < 1e-9:
        raise DegenerateSet("no unique principal axis (eigenvalue gap < 1e-9)")
    return vecs[:, 2]


def wrap_angle(a):
    """Wrap angles into [0, 2*pi)."""
    w = np.mod(a, TWO_PI)
    # np.mod can return exactly 2*pi for tiny negative inputs
    return np.where(w >= TWO_PI, 0.0, w)


@dataclass(frozen=True)
class Pose:
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rotation: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        t = tuple(float(x) for x in self.translation)
        r = tuple(float(x) for x in wrap_angle(np.asarray(self.rotation, dtype=float)))
        if not all(math.isfinite(x) for x in t + r):
            raise ValueError("pose entries must be finite")
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", r)

    @classmethod
    def from_array(cls, v) -> "Pose":
        v = np.asarray(v, dtype=float)
        return cls(tuple(v[:3]), tuple(v[3:6]))

    def as_array(self) -> np.ndarray:
        return np.array(self.translation + self.rotation)

    @property
    def matrix(self) -> np.ndarray:
        return rotation_matrices(np.array(self.rotation))[0]


def rotation_matrices(angles) -> np.ndarray:
    """Rotation matrices ``Rz @ Ry @ Rx`` for an ``(N, 3)`` array of angles."""
    a = np.atleast_2d(np.asarray(angles, dtype=float))
    cx, cy, cz = np.cos(a[:, 0]), np.cos(a[:, 1]), np.cos(a[:, 2])
    sx, sy, sz = np.sin(a[:, 0]), np.sin(a[:, 1]), np.sin(a[:, 2])
    R = np.empty((len(a), 3, 3))
    R[:, 0, 0] = cz * cy
    R[:, 0, 1] = cz * sy * sx - sz * cx
    R[:, 0, 2] = cz * sy * cx + sz * sx
    R[:, 1, 0] = sz * cy
    R[:, 1, 1] = sz * sy * sx + cz * cx
    R[:, 1, 2] = sz * sy * cx - cz * sx
    R[:, 2, 0] = -sy
    R[:, 2, 1] = cy * sx
    R[:, 2, 2] = cy * cx
    return R


def matrix_to_angles(R) -> np.ndarray:
    """Canonical Tait-Bryan angles (middle angle in [-pi/2, pi/2]) wrapped to [0, 2*pi)."""
    R = np.asarray(R, dtype=float).reshape(-1, 3, 3)
    ry = -np.arcsin(np.clip(R[:, 2, 0], -1.0, 1.0))
    cy = np.cos(ry)
    gimbal = cy < 1e-12
    rx = np.where(gimbal, 0.0, np.arctan2(R[:, 2, 1], R[:, 2, 2]))
    rz = np.where(gimbal, np.arctan2(-R[:, 0, 1], R[:, 1, 1]),
                  np.arctan2(R[:, 1, 0], R[:, 0, 0]))
    return wrap_angle(np.stack([rx, ry, rz], axis=1))


def alternate_angles(angles) -> np.ndarray:
    """The other Tait-Bryan triple describing the same rotation."""
    a = np.atleast_2d(np.asarray(angles, dtype=float))
    return wrap_angle(np.stack([a[:, 0] + math.pi, math.pi - a[:, 1], a[:, 2] + math.pi], axis=1))


def angular_gap(a, b):
    """Elementwise wrapped distance between angles, in [0, pi]."""
    d = np.abs(np.mod(np.asarray(a) - np.asarray(b), TWO_PI))
    return np.minimum(d, TWO_PI - d)


def apply_pose(pose: Pose, p) -> np.ndarray:
    return pose.matrix @ np.asarray(p, dtype=float) + np.asarray(pose.translation)


def place(poses, positions) -> np.ndarray:
    """Positions of a template under each pose: ``(N, 6)`` x ``(n, 3)`` -> ``(N, n, 3)``."""
    poses = np.atleast_2d(np.asarray(poses, dtype=float))
    R = rotation_matrices(poses[:, 3:])
    return np.einsum("nij,kj->nki", R, np.asarray(positions, dtype=float)) + poses[:, None, :3]


@dataclass(frozen=True)
class Configuration:
    setA: PointSet
    setB: PointSet
    pose: Pose

    @cached_property
    def placedB(self) -> np.ndarray:
        return place(self.pose.as_array(), self.setB.positions)[0]

    def distances(self) -> np.ndarray:
        """All cross distances, shape ``(len(A), len(B))``."""
        diff = self.setA.positions[:, None, :] - self.placedB[None, :, :]
        return np.linalg.norm(diff, axis=2)


def pair_distance(config: Configuration, a: int, b: int) -> float:
    """Distance between point id ``a`` of set A and point id ``b`` of the posed set B."""
    ia = config.setA.index_of(a)
    ib = config.setB.index_of(b)
    return float(np.linalg.norm(config.setA.positions[ia] - config.placedB[ib]))


@dataclass(frozen=True)
class BoundRule:
    """Pair bound ``lam * (r_a + r_b) + delta``."""

    lam: float
    delta: float

    def __call__(self, ra, rb):
        return self.lam * (np.asarray(ra) + np.asarray(rb)) + self.delta


@dataclass(frozen=True)
class ConstraintSystem:
    active_lower: BoundRule = BoundRule(0.75, 0.0)
    active_upper: BoundRule = BoundRule(1.0, 0.9)
    collision: BoundRule = BoundRule(0.75, 0.0)
    axis_restraint: tuple[float, float] | None = None
    # position of the thin-well target inside [lower, upper]
    target_fraction: float = 0.5

    def lower(self, ra, rb):
        return self.active_lower(ra, rb)

    def upper(self, ra, rb):
        return self.active_upper(ra, rb)

    def collision_bound(self, ra, rb):
        return self.collision(ra, rb)

    def target(self, ra, rb):
        lo, hi = self.lower(ra, rb), self.upper(ra, rb)
        return lo + self.target_fraction * (hi - lo)

    def matrices(self, A: PointSet, B: PointSet) -> dict[str, np.ndarray]:
        ra, rb = A.radii[:, None], B.radii[None, :]
        return {
            "collision": self.collision_bound(ra, rb),
            "lower": self.lower(ra, rb),
            "upper": self.upper(ra, rb),
            "target": self.target(ra, rb),
        }

    def validate(self, A: PointSet, B: PointSet) -> None:
        m = self.matrices(A, B)
        if np.any(m["lower"] > m["upper"]):
            raise ValueError("activeLower bound exceeds activeUpper bound for some pair")


def check_c1(config: Configuration, sys: ConstraintSystem) -> list[tuple[int, int, float, float]]:
    """Collision violations as ``(a_id, b_id, distance, bound)``."""
    d = config.distances()
    bound = sys.matrices(config.setA, config.setB)["collision"]
    out = []
    for i, j in zip(*np.nonzero(d < bound)):
        out.append((config.setA.ids[i], config.setB.ids[j], float(d[i, j]), float(bound[i, j])))
    return out


def check_active_interval(config: Configuration, pair: tuple[int, int], sys: ConstraintSystem) -> bool:
    a, b = pair
    A, B = config.setA, config.setB
    ra, rb = A.radii[A.index_of(a)], B.radii[B.index_of(b)]
    d = pair_distance(config, a, b)
    return bool(sys.lower(ra, rb) <= d <= sys.upper(ra, rb))


def principal_axis_angle(config: Configuration) -> float:
    axis_a = config.setA.principal_axis
    axis_b = config.pose.matrix @ config.setB.principal_axis
    # atan2 keeps full precision near 0 and pi/2
    return float(math.atan2(np.linalg.norm(np.cross(axis_a, axis_b)), abs(float(np.dot(axis_a, axis_b)))))


def axis_angles(A: PointSet, B: PointSet, poses) -> np.ndarray:
    """Vectorized principal-axis angle for many poses."""
    poses = np.atleast_2d(poses)
    R = rotation_matrices(poses[:, 3:])
    b = np.einsum("nij,j->ni", R, B.principal_axis)
    a = A.principal_axis
    return np.arctan2(np.linalg.norm(np.cross(a[None, :], b), axis=1), np.abs(b @ a))


def feasible_mask(A: PointSet, B: PointSet, sys: ConstraintSystem, poses,
                  skip: Iterable[tuple[int, int]] = ()) -> np.ndarray:
    """Boolean mask of poses satisfying C1 (excluding index pairs in ``skip``) and the axis restraint."""
    poses = np.atleast_2d(poses)
    if len(poses) == 0:
        return np.zeros(0, dtype=bool)
    placed = place(poses, B.positions)
    d = np.linalg.norm(A.positions[None, :, None, :] - placed[:, None, :, :], axis=3)
    bound = sys.matrices(A, B)["collision"].copy()
    for i, j in skip:
        bound[i, j] = -np.inf
    ok = np.all(d >= bound, axis=(1, 2))
    if sys.axis_restraint is not None:
        lo, hi = sys.axis_restraint
        ang = axis_angles(A, B, poses)
        ok &= (ang >= lo) & (ang <= hi)
    return ok


@dataclass(frozen=True)
class GridSpec:
    """Anisotropic 6-D grid: 3 translation steps (angstrom) then 3 rotation steps (radians)."""

    steps: tuple[float, ...]
    origin: tuple[float, ...] = (0.0,) * 6

    def __post_init__(self):
        steps = tuple(float(s) for s in self.steps)
        origin = tuple(float(o) for o in self.origin)
        if len(steps) != 6 or len(origin) != 6:
            raise ValueError("grid needs 6 steps and a 6-vector origin")
        if not all(s > 0 for s in steps):
            raise ValueError("grid steps must be positive")
        for s in steps[3:]:
            n = TWO_PI / s
            if abs(n - round(n)) > 1e-9:
                raise ValueError(f"rotation step {s} does not divide 2*pi")
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "origin", origin)

    @classmethod
    def uniform(cls, translation_step: float, rotation_step: float, origin=(0.0,) * 6) -> "GridSpec":
        return cls((translation_step,) * 3 + (rotation_step,) * 3, origin)

    @classmethod
    def from_counts(cls, translation_steps: Sequence[float], rotation_counts: Sequence[int],
                    origin=(0.0,) * 6) -> "GridSpec":
        return cls(tuple(translation_steps) + tuple(TWO_PI / int(c) for c in rotation_counts), origin)

    @cached_property
    def step_array(self) -> np.ndarray:
        return np.array(self.steps)

    @cached_property
    def origin_array(self) -> np.ndarray:
        return np.array(self.origin)

    @cached_property
    def periods(self) -> tuple[int, int, int]:
        return tuple(int(round(TWO_PI / s)) for s in self.steps[3:])

    def refine(self, k: int) -> "GridSpec":
        """Grid with every cell split into ``k`` along each axis (same origin)."""
        return GridSpec(tuple(s / k for s in self.steps), self.origin)


CubeKey = tuple[int, int, int, int, int, int]


def cube_indices(poses, grid: GridSpec) -> np.ndarray:
    """Integer lattice coordinates of the cells containing each pose, ``(N, 6)``."""
    poses = np.atleast_2d(np.asarray(poses, dtype=float))
    rel = poses - grid.origin_array
    rel[:, 3:] = np.mod(rel[:, 3:], TWO_PI)
    idx = np.floor(rel / grid.step_array).astype(np.int64)
    idx[:, 3:] = np.mod(idx[:, 3:], np.array(grid.periods))
    return idx


def cube_of(pose: Pose, grid: GridSpec) -> CubeKey:
    return tuple(int(i) for i in cube_indices(pose.as_array(), grid)[0])


def cube_center(key: CubeKey, grid: GridSpec) -> Pose:
    v = grid.origin_array + (np.asarray(key, dtype=float) + 0.5) * grid.step_array
    return Pose.from_array(v)


def normalize_key(key, grid: GridSpec) -> CubeKey:
    k = list(int(x) for x in key)
    for j, p in enumerate(grid.periods):
        k[3 + j] %= p
    return tuple(k)


# --- file formats -----------------------------------------------------------

def read_point_file(path, label: str | None = None) -> PointSet:
    """Read ``id x y z radius`` lines; ``#`` starts a comment."""
    pts = []
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5:
            raise ValueError(f"{path}:{lineno}: expected 'id x y z radius'")
        pts.append(Point(int(parts[0]), (float(parts[1]), float(parts[2]), float(parts[3])),
                         float(parts[4])))
    return PointSet(label or Path(path).stem, tuple(pts))


def write_point_file(path, ps: PointSet) -> None:
    lines = [f"# {ps.label}"]
    for p in ps.points:
        lines.append(f"{p.id} {p.position[0]!r} {p.position[1]!r} {p.position[2]!r} {p.radius!r}")
    Path(path).write_text("\n".join(lines) + "\n")


# Default radii (angstrom) keyed by element symbol; unknown elements get 1.7.
PDB_RADII = {"H": 1.2, "C": 1.7, "N": 1.55, "O": 1.52, "S": 1.8, "P": 1.8}


def read_pdb(path, label: str | None = None) -> PointSet:
    """Minimal PDB reader: ATOM records only, radius from the element column."""
    pts = []
    for line in Path(path).read_text().splitlines():
        if not line.startswith("ATOM"):
            continue
        serial = int(line[6:11])
        x, y, z = float(line[30:38]), float(line[38:46]), float(line[46:54])
        element = line[76:78].strip() if len(line) >= 78 else ""
        if not element:
            element = line[12:16].strip()[:1]
        pts.append(Point(serial, (x, y, z), PDB_RADII.get(element.upper(), 1.7)))
    return PointSet(label or Path(path).stem, tuple(pts))
