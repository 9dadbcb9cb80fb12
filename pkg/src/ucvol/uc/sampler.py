"""The UC sampler: Cayley seeding, frontier traversal, slicing and counting.

For every flip the traversal starts from the cubes of realized base-grid
points, then repeatedly takes a promising cube, slices its decomposition
elements with the active targets in Cayley space, realizes each intersection
in that flip and counts the grid cube holding the realized pose.

The Cayley map is far from linear across a coarse cube, so a realized pose
can land in a neighbour of the cube it was sliced from. Every processed cube
therefore also gets a direct test: its centre and 5-face centres are
projected onto the exact contact distances by Gauss-Newton steps, and the
cube counts when a projected pose stays inside it and is collision free.

Tait-Bryan angles cover every rotation twice; the grid over ``[0, 2pi)^3``
therefore holds two copies of each configuration. Both copies are seeded and
traversed, and a realized pose is reported in the representation nearest to
the pose-space point it was linearized from.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from ..atlas import ACRDescriptor
from ..cayley import (
    CompleteThreeTree,
    FlipSignature,
    base_grid_array,
    build_acg,
    cayley_bounds,
    cayley_of_poses,
    find_complete_3tree,
    flips_of_poses,
    realize_batch,
)
from ..core import (
    Configuration,
    ConstraintSystem,
    CubeKey,
    GridSpec,
    PointSet,
    Pose,
    alternate_angles,
    angular_gap,
    cube_indices,
    feasible_mask,
    rotation_matrices,
)
from ..errors import BudgetExceeded, EmptyACR, EmptyBox
from . import decompose as dc
from .frontier import FrontierGraph, traverse
from .intersect import solve_parallelepipeds, solve_simplices

RESIDUAL_TOL = 1e-6
PROJECT_TOL = 1e-9
PROJECT_ITERS = 8
# cube centre and 5-face centres, in unit-cube coordinates
RESCUE_POINTS = np.vstack([np.full((1, 6), 0.5), dc.LOCAL[dc.FACE_CENTER0:]])


class Variant(str, Enum):
    Simplicial = "simplicial"
    FaceCenter = "face"
    Hybrid = "hybrid"
    Basis = "basis"
    Thick = "thick"


@dataclass
class ACRSampleResult:
    acr: ACRDescriptor
    variant: Variant
    grid: GridSpec
    counted: dict = field(default_factory=dict)  # CubeKey -> (flip, pose array), insertion ordered
    per_flip_visited: dict = field(default_factory=dict)  # flip -> set of processed CubeKeys
    stats: dict = field(default_factory=dict)
    diagnostic: str | None = None
    A: PointSet | None = None
    B: PointSet | None = None

    @property
    def counted_cubes(self) -> set:
        return set(self.counted)

    @property
    def volume(self) -> int:
        return len(self.counted)

    @property
    def sample_configs(self) -> list[tuple[CubeKey, Configuration]]:
        return [(k, Configuration(self.A, self.B, Pose.from_array(p))) for k, (_, p) in self.counted.items()]

    def rows(self):
        """``(flip, key, pose)`` rows sorted by key, for deterministic output."""
        for k in sorted(self.counted):
            f, p = self.counted[k]
            yield f, k, p


def _stats0():
    return dict(seeds=0, processed=0, elements=0, solves=0, singular=0, intersections=0,
                flip_rejected=0, unrealizable=0, infeasible=0, accepted=0, projected=0, peak_frontier=0,
                hybrid_retries=0, wall_time=0.0)


class ACRSampler:
    """One ACR, one variant: holds the tree and per-variant element tables."""

    def __init__(self, A: PointSet, B: PointSet, acr: ACRDescriptor, variant: Variant | str,
                 grid: GridSpec, cayley_step: float | None, sys: ConstraintSystem,
                 batch: int = 64, max_cubes: int | None = None, thick_subdivisions: int | None = None,
                 flip_gate: bool = True, promote_realized: bool = True, frontier_order: str = "fifo",
                 project_misses: bool = True, skip_processed_faces: bool = False):
        self.A, self.B, self.acr, self.grid, self.sys = A, B, acr, grid, sys
        self.variant = Variant(variant)
        self.q = len(acr.Q)
        if self.variant is Variant.Thick and self.q != 1:
            raise ValueError("the thick variant needs |Q| = 1")
        self.cayley_step = cayley_step if cayley_step is not None else grid.steps[0] / 4
        self.batch = batch
        self.max_cubes = max_cubes
        self.thick_subdivisions = thick_subdivisions
        self.flip_gate = flip_gate
        self.promote_realized = promote_realized
        self.frontier_order = frontier_order
        self.project_misses = project_misses
        self.skip_processed_faces = skip_processed_faces
        self._landed: list = []
        self._rescued: set = set()
        self.tree: CompleteThreeTree = find_complete_3tree(build_acg(A, B, acr.Q, sys))
        # targets follow the ACG (its Q order equals the descriptor order)
        self.targets = np.array(self.tree.acg.targets)
        self.flips = self.tree.flips()
        self.free_bits = np.array(self.tree.free_bits, dtype=int)
        self.steps = grid.step_array
        self.periods = (None, None, None) + tuple(grid.periods)
        ra = A.radii[[A.index_of(a) for a, _ in self.tree.acg.Q]]
        rb = B.radii[[B.index_of(b) for _, b in self.tree.acg.Q]]
        self.active_lower = np.atleast_1d(sys.lower(ra, rb))
        self.active_upper = np.atleast_1d(sys.upper(ra, rb))
        self._qa = A.positions[[A.index_of(a) for a, _ in self.tree.acg.Q]]
        self._qb = B.positions[[B.index_of(b) for _, b in self.tree.acg.Q]]
        if self.q < 6:
            if self.variant is Variant.Basis:
                self.ptab = dc.basis_table(self.q)
            else:
                self.stab = dc.simplicial_table(self.q)
                if self.variant in (Variant.FaceCenter, Variant.Hybrid, Variant.Thick):
                    self.ftab = dc.face_center_table(self.q)
        self.result = ACRSampleResult(acr, self.variant, grid, stats=_stats0(), A=A, B=B)

    # -- helpers -------------------------------------------------------------
    def _lower_corners(self, keys: np.ndarray) -> np.ndarray:
        return self.grid.origin_array + keys * self.steps

    def _flip_ok(self, x: np.ndarray, flip: FlipSignature) -> np.ndarray:
        if not self.flip_gate or len(self.free_bits) == 0 or len(x) == 0:
            return np.ones(len(x), dtype=bool)
        s = flips_of_poses(self.tree, x)[:, self.free_bits]
        f = np.array(flip)[self.free_bits]
        return np.all((s == f) | (s == 0), axis=1)

    def _nearest_representation(self, poses: np.ndarray, near: np.ndarray) -> np.ndarray:
        alt = alternate_angles(poses[:, 3:])
        d0 = angular_gap(poses[:, 3:], near[:, 3:]).sum(axis=1)
        d1 = angular_gap(alt, near[:, 3:]).sum(axis=1)
        out = poses.copy()
        swap = d1 < d0
        out[swap, 3:] = alt[swap]
        return out

    def _accept(self, X: np.ndarray, x: np.ndarray, flip: FlipSignature):
        """Realize Cayley points ``X`` in ``flip``; returns (mask, poses) for the feasible ones."""
        st = self.result.stats
        n = len(X)
        st["intersections"] += n
        keep = self._flip_ok(x, flip)
        st["flip_rejected"] += int(n - keep.sum())
        poses = np.zeros((n, 6))
        if keep.any():
            P, ok, res = realize_batch(self.tree, X[keep], flip)
            ok &= res <= RESIDUAL_TOL
            P = self._nearest_representation(P, x[keep])
            good = ok.copy()
            good[ok] = feasible_mask(self.A, self.B, self.sys, P[ok])
            st["unrealizable"] += int((~ok).sum())
            st["infeasible"] += int((ok & ~good).sum())
            idx = np.flatnonzero(keep)
            keep[idx[~good]] = False
            poses[idx[good]] = P[good]
        st["accepted"] += int(keep.sum())
        return keep, poses

    def _count(self, poses: np.ndarray, flip: FlipSignature) -> None:
        if len(poses) == 0:
            return
        keys = cube_indices(poses, self.grid)
        counted = self.result.counted
        for k, p in zip(map(tuple, keys.tolist()), poses):
            if k not in counted:
                counted[k] = (flip, p)
            self._landed.append(k)

    def _contact_residuals(self, x: np.ndarray, jacobian: bool = False):
        """Active pair distances minus targets at poses ``x``, optionally with d/dpose ``(m, q, 6)``."""
        R = rotation_matrices(x[:, 3:])
        v = self._qa[None] - np.einsum("mij,qj->mqi", R, self._qb) - x[:, None, :3]
        d = np.linalg.norm(v, axis=2)
        r = d - self.targets[None]
        if not jacobian:
            return r
        u = v / d[..., None]
        J = np.empty(r.shape + (6,))
        J[..., :3] = -u
        eps = 1e-7
        for k in range(3):
            hi, lo = x[:, 3:].copy(), x[:, 3:].copy()
            hi[:, k] += eps
            lo[:, k] -= eps
            dR = (rotation_matrices(hi) - rotation_matrices(lo)) / (2 * eps)
            J[..., 3 + k] = -np.einsum("mqi,mij,qj->mq", u, dR, self._qb)
        return r, J

    def _project(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Minimum-step (in grid units) Gauss-Newton projection onto the target distances."""
        x = x.copy()
        for _ in range(PROJECT_ITERS):
            r, J = self._contact_residuals(x, jacobian=True)
            if np.abs(r).max() <= PROJECT_TOL:
                break
            du = np.einsum("miq,mq->mi", np.linalg.pinv(J * self.steps), r)
            x -= du * self.steps
        return x, np.abs(self._contact_residuals(x)).max(axis=1) <= PROJECT_TOL

    def _rescue(self, keys) -> None:
        """Count processed cubes by projecting fixed points onto the exact contact distances.

        The candidates depend on the cube alone, so the outcome is the same in
        every flip and traversal order; each cube is tried once. Rescues only
        count, they never open faces.
        """
        tried = self._rescued
        todo = [k for k in map(tuple, keys.tolist()) if k not in tried and k not in self.result.counted]
        tried.update(todo)
        if not todo:
            return
        sub = np.array(todo, dtype=np.int64)
        m = len(RESCUE_POINTS)
        owner = np.repeat(np.arange(len(sub)), m)
        start = (self._lower_corners(sub)[:, None, :] + RESCUE_POINTS[None] * self.steps).reshape(-1, 6)
        P, good = self._project(start)
        good &= np.all(cube_indices(P, self.grid) == sub[owner], axis=1)
        good[good] = feasible_mask(self.A, self.B, self.sys, P[good])
        owner, P = owner[good], P[good]
        if len(P) == 0:
            return
        counted = self.result.counted
        flips = flips_of_poses(self.tree, P) if self.tree.n > 3 else np.zeros((len(P), 0), dtype=int)
        for i, p, f in zip(owner, P, flips):
            if todo[i] not in counted:
                counted[todo[i]] = (tuple(int(b) for b in f), p)
                self.result.stats["projected"] += 1

    # -- seeding ---------------------------------------------------------------
    def base_points(self) -> np.ndarray:
        if self.q == 6:
            return self.targets[None, :]
        box = cayley_bounds(self.tree, self.sys)
        return base_grid_array(self.tree, box, self.cayley_step)

    def seed_cubes(self) -> dict[FlipSignature, list[CubeKey]]:
        """Per flip: deduplicated seed cubes (both angle representations), counted on the way."""
        try:
            C = self.base_points()
        except EmptyBox:
            C = np.zeros((0, 6))
        self.result.stats["base_points"] = len(C)
        seeds = {}
        for f in self.flips:
            if len(C) == 0:
                seeds[f] = []
                continue
            P, ok, res = realize_batch(self.tree, C, f)
            ok &= res <= RESIDUAL_TOL
            P = P[ok]
            P = P[feasible_mask(self.A, self.B, self.sys, P)]
            alt = P.copy()
            alt[:, 3:] = alternate_angles(P[:, 3:])
            both = np.concatenate([P, alt])
            self._count(both, f)
            keys = cube_indices(both, self.grid)
            seeds[f] = list(dict.fromkeys(map(tuple, keys.tolist())))
        self.result.stats["seeds"] = sum(len(v) for v in seeds.values())
        return seeds

    # -- cube processing -------------------------------------------------------
    def _simplex_pass(self, table: dc.SimplexTable, keys, masks, pts, imgs, flip):
        st = self.result.stats
        live = (table.faces[None, :] & masks[:, None]) == 0
        kk, ee = np.nonzero(live)
        st["elements"] += len(kk)
        out = np.zeros(len(keys), dtype=np.int64)
        hit = np.zeros(len(keys), dtype=np.int64)
        if len(kk) == 0:
            return out, hit
        vid = table.vertices[ee]
        w, acc, sing = solve_simplices(imgs[kk[:, None], vid], self.targets)
        st["solves"] += len(kk)
        st["singular"] += int(sing.sum())
        kk, ee, vid, w = kk[acc], ee[acc], vid[acc], w[acc]
        X = np.einsum("mk,mkd->md", w, imgs[kk[:, None], vid])
        X[:, : self.q] = self.targets
        x = np.einsum("mk,mkd->md", w, pts[kk[:, None], vid])
        ok, poses = self._accept(X, x, flip)
        self._count(poses[ok], flip)
        np.bitwise_or.at(out, kk[ok], table.faces[ee[ok]])
        np.add.at(hit, kk[ok], 1)
        return out, hit

    def _basis_pass(self, keys, masks, lower, flip):
        st = self.result.stats
        t = self.ptab
        # face centers give the basis, facet centers the parallelepiped centers
        face_pts = lower[:, None, :] + dc.LOCAL[None, dc.FACE_CENTER0:] * self.steps
        K = len(keys)
        face_img = cayley_of_poses(self.tree, face_pts.reshape(-1, 6)).reshape(K, dc.N_FACES, 6)
        basis = 0.5 * (face_img[:, 1::2] - face_img[:, 0::2])  # (K, 6 axes, 6)
        live = (t.faces[None, :] & masks[:, None]) == 0
        kk, ee = np.nonzero(live)
        st["elements"] += len(kk)
        out = np.zeros(K, dtype=np.int64)
        if len(kk) == 0:
            return out
        centers = lower[kk] + t.centers[ee] * self.steps
        c_img = cayley_of_poses(self.tree, centers)
        axes = t.axes[ee]
        bv = basis[kk[:, None], axes]
        alpha, acc, sing = solve_parallelepipeds(c_img, bv, self.targets)
        st["solves"] += len(kk)
        st["singular"] += int(sing.sum())
        kk, ee, axes, alpha, centers = kk[acc], ee[acc], axes[acc], alpha[acc], centers[acc]
        X = c_img[acc] + np.einsum("mj,mjd->md", alpha, bv[acc])
        X[:, : self.q] = self.targets
        x = centers.copy()
        np.add.at(x, (np.arange(len(x))[:, None], axes), alpha * self.steps[axes] / 2)
        ok, poses = self._accept(X, x, flip)
        self._count(poses[ok], flip)
        np.bitwise_or.at(out, kk[ok], t.faces[ee[ok]])
        return out

    def _thick_pass(self, keys, masks, pts, imgs, flip):
        st = self.result.stats
        t = self.ftab
        live = (t.faces[None, :] & masks[:, None]) == 0
        kk, ee = np.nonzero(live)
        st["elements"] += len(kk)
        out = np.zeros(len(keys), dtype=np.int64)
        if len(kk) == 0:
            return out
        v0, v1 = t.vertices[ee, 0], t.vertices[ee, 1]
        c0, c1 = imgs[kk, v0], imgs[kk, v1]
        p0, p1 = pts[kk, v0], pts[kk, v1]
        if self.thick_subdivisions is not None:
            s = np.full(len(kk), int(self.thick_subdivisions))
        else:
            s = np.maximum(1, np.ceil(np.linalg.norm(c1 - c0, axis=1) / self.cayley_step)).astype(int)
        rep = np.repeat(np.arange(len(kk)), s + 1)
        start = np.repeat(np.cumsum(s + 1) - (s + 1), s + 1)
        tt = (np.arange(len(rep)) - start) / np.repeat(s, s + 1)
        X = c0[rep] + tt[:, None] * (c1 - c0)[rep]
        x = p0[rep] + tt[:, None] * (p1 - p0)[rep]
        inside = np.all((X[:, : self.q] >= self.active_lower) & (X[:, : self.q] <= self.active_upper), axis=1)
        st["solves"] += len(rep)
        rep, X, x = rep[inside], X[inside], x[inside]
        ok, poses = self._accept(X, x, flip)
        self._count(poses[ok], flip)
        np.bitwise_or.at(out, kk[rep[ok]], t.faces[ee[rep[ok]]])
        return out

    def process_cubes(self, keys: np.ndarray, processed_masks: np.ndarray, flip: FlipSignature) -> np.ndarray:
        """Process a batch of cubes in one flip; returns per-cube feasible-face masks."""
        keys = np.asarray(keys, dtype=np.int64).reshape(-1, 6)
        masks = np.asarray(processed_masks, dtype=np.int64)
        if not self.skip_processed_faces:
            # an element on a shared face opens every cube holding it only
            # when each of those cubes evaluates it, which keeps traversal
            # independent of processing order
            masks = np.zeros_like(masks)
        lower = self._lower_corners(keys)
        self.result.stats["processed"] += len(keys)
        out = self._variant_pass(keys, masks, lower, flip)
        if self.project_misses:
            self._rescue(keys)
        return out

    def _variant_pass(self, keys, masks, lower, flip) -> np.ndarray:
        if self.variant is Variant.Basis:
            return self._basis_pass(keys, masks, lower, flip)
        pts = dc.cube_points(lower, self.steps)
        K, npts, _ = pts.shape
        imgs = cayley_of_poses(self.tree, pts.reshape(-1, 6)).reshape(K, npts, 6)
        if self.variant is Variant.Thick:
            return self._thick_pass(keys, masks, pts, imgs, flip)
        if self.variant is Variant.FaceCenter:
            return self._simplex_pass(self.ftab, keys, masks, pts, imgs, flip)[0]
        out, hit = self._simplex_pass(self.stab, keys, masks, pts, imgs, flip)
        if self.variant is Variant.Hybrid:
            retry = np.flatnonzero(hit == 0)
            if len(retry):
                self.result.stats["hybrid_retries"] += len(retry)
                o2, _ = self._simplex_pass(self.ftab, keys[retry], masks[retry], pts[retry], imgs[retry], flip)
                out[retry] |= o2
        return out

    # -- driver ----------------------------------------------------------------
    def run(self) -> ACRSampleResult:
        t0 = time.perf_counter()
        res = self.result
        seeds = self.seed_cubes()
        if not any(seeds.values()):
            res.diagnostic = (f"no realizable seed on a Cayley grid of {res.stats.get('base_points', 0)} points "
                              f"at step {self.cayley_step}")
            res.stats["wall_time"] = time.perf_counter() - t0
            return res
        if self.q < 6:
            for f in self.flips:
                if not seeds[f]:
                    continue
                frontier = FrontierGraph(6, self.periods, self.frontier_order)
                for k in seeds[f]:
                    frontier.add_seed(k)
                visited = set()
                res.per_flip_visited[f] = visited

                reached = set(seeds[f])

                def process(work, f=f, visited=visited, frontier=frontier, reached=reached):
                    keys = np.array([k for k, _ in work], dtype=np.int64)
                    masks = np.array([m for _, m in work], dtype=np.int64)
                    visited.update(k for k, _ in work)
                    if self.max_cubes is not None and res.stats["processed"] + len(work) > self.max_cubes:
                        raise BudgetExceeded(f"more than {self.max_cubes} cubes processed")
                    self._landed = []
                    out = self.process_cubes(keys, masks, f)
                    if self.promote_realized:
                        # a cube holding a realized ACR point is as good as a seed
                        for k in self._landed:
                            if k not in reached and k not in visited:
                                reached.add(k)
                                frontier.add_seed(k)
                    return out

                traverse(frontier, process, self.batch)
                res.stats["peak_frontier"] = max(res.stats["peak_frontier"], frontier.peak_size)
        res.stats["counted"] = len(res.counted)
        res.stats["wall_time"] = time.perf_counter() - t0
        return res


def sample_acr(A: PointSet, B: PointSet, acr: ACRDescriptor | Sequence, variant: Variant | str,
               grid: GridSpec, cayley_step: float | None, sys: ConstraintSystem, *,
               strict: bool = False, **options) -> ACRSampleResult:
    """Count the grid cubes meeting one ACR.

    An ACR without any realizable seed yields an empty result with a
    diagnostic, or raises EmptyACR when ``strict``.
    """
    if not isinstance(acr, ACRDescriptor):
        acr = ACRDescriptor(tuple(acr))
    res = ACRSampler(A, B, acr, variant, grid, cayley_step, sys, **options).run()
    if strict and res.diagnostic:
        raise EmptyACR(res.diagnostic)
    return res


def seed_cubes(A: PointSet, B: PointSet, acr, grid: GridSpec, cayley_step: float,
               sys: ConstraintSystem) -> dict[FlipSignature, list[CubeKey]]:
    if not isinstance(acr, ACRDescriptor):
        acr = ACRDescriptor(tuple(acr))
    return ACRSampler(A, B, acr, Variant.Simplicial, grid, cayley_step, sys).seed_cubes()


@dataclass(frozen=True)
class CayleyVolume:
    preimages: int
    occupied: int
    base_points: int
    cubes: frozenset


def easal_cayley_volume(A: PointSet, B: PointSet, acr, grid: GridSpec, cayley_step: float,
                        sys: ConstraintSystem) -> CayleyVolume:
    """Uniform Cayley grid, every flip realized; counts feasible pre-images and occupied cubes."""
    if not isinstance(acr, ACRDescriptor):
        acr = ACRDescriptor(tuple(acr))
    s = ACRSampler(A, B, acr, Variant.Simplicial, grid, cayley_step, sys)
    try:
        C = s.base_points()
    except EmptyBox:
        C = np.zeros((0, 6))
    n = 0
    cubes: set = set()
    for f in s.flips:
        if len(C) == 0:
            break
        P, ok, res = realize_batch(s.tree, C, f)
        ok &= res <= RESIDUAL_TOL
        P = P[ok]
        P = P[feasible_mask(A, B, sys, P)]
        n += len(P)
        alt = P.copy()
        alt[:, 3:] = alternate_angles(P[:, 3:])
        cubes.update(map(tuple, cube_indices(np.concatenate([P, alt]), grid).tolist()))
    return CayleyVolume(n, len(cubes), len(C), frozenset(cubes))
