"""Active constraint graphs, complete 3-trees and the Cayley covering map.

A Cayley point is stored as a length-6 vector: the |Q| active lengths (in Q
order) followed by the 6 - |Q| free Cayley parameters (in F order). Batched
routines take ``(N, 6)`` arrays so whole grids or cube decompositions can be
mapped in a single numpy pass.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np

from .core import (
    Configuration,
    ConstraintSystem,
    PointSet,
    Pose,
    matrix_to_angles,
    place,
)
from .errors import (
    EmptyBox,
    InsufficientPoints,
    NoRealPreimage,
    NoRealSolution,
    NotNice,
    SuperpositionFailure,
    ZeroVolume,
)

LENGTH_TOL = 1e-9
ZERO_TOL = 1e-12

Pair = tuple[int, int]
Vertex = tuple[str, int]  # ("A" | "B", point id)
FlipSignature = tuple[int, ...]


@dataclass(frozen=True)
class CayleyPoint:
    active: tuple[float, ...]
    free: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "active", tuple(float(x) for x in self.active))
        object.__setattr__(self, "free", tuple(float(x) for x in self.free))
        if len(self.active) + len(self.free) != 6:
            raise ValueError("Cayley point must have 6 coordinates in total")

    def as_array(self) -> np.ndarray:
        return np.array(self.active + self.free)

    @classmethod
    def from_array(cls, v, q: int) -> "CayleyPoint":
        v = np.asarray(v, dtype=float)
        return cls(tuple(v[:q]), tuple(v[q:]))


@dataclass(frozen=True)
class ActiveConstraintGraph:
    A: PointSet
    B: PointSet
    Q: tuple[Pair, ...]
    vertices: tuple[Vertex, ...]
    targets: tuple[float, ...]

    @property
    def q(self) -> int:
        return len(self.Q)

    def position(self, v: Vertex) -> np.ndarray:
        ps = self.A if v[0] == "A" else self.B
        return ps.positions[ps.index_of(v[1])]

    def intra_length(self, u: Vertex, w: Vertex) -> float:
        if u[0] != w[0]:
            raise ValueError("intra edge between different sets")
        return float(np.linalg.norm(self.position(u) - self.position(w)))

    @cached_property
    def q_index(self) -> dict[frozenset, int]:
        return {frozenset((("A", a), ("B", b))): i for i, (a, b) in enumerate(self.Q)}


def _non_collinear(points: np.ndarray) -> bool:
    if len(points) < 3:
        return False
    c = points - points.mean(axis=0)
    return np.linalg.matrix_rank(c, tol=1e-9) >= 2


def build_acg(A: PointSet, B: PointSet, Q: Sequence[Pair], sys: ConstraintSystem) -> ActiveConstraintGraph:
    Q = tuple((int(a), int(b)) for a, b in Q)
    if not 1 <= len(Q) <= 6:
        raise ValueError(f"|Q| must be in 1..6, got {len(Q)}")
    if len(set(Q)) != len(Q):
        raise ValueError("duplicate pairs in Q")
    for a, b in Q:
        A.index_of(a)
        B.index_of(b)
    verts: list[Vertex] = []
    for side, ps, ends in (("A", A, [a for a, _ in Q]), ("B", B, [b for _, b in Q])):
        chosen = list(dict.fromkeys(ends))
        pos = ps.positions
        centroid = np.mean([pos[ps.index_of(i)] for i in chosen], axis=0)
        rest = [pid for pid in ps.ids if pid not in chosen]
        # nearest to the Q-endpoint centroid first; ties by id
        rest.sort(key=lambda pid: (float(np.linalg.norm(pos[ps.index_of(pid)] - centroid)), pid))
        while not (len(chosen) >= 3 and _non_collinear(np.array([pos[ps.index_of(i)] for i in chosen]))):
            if not rest:
                raise InsufficientPoints(f"set {ps.label} cannot supply 3 non-collinear vertices")
            cand = rest.pop(0)
            trial = chosen + [cand]
            if len(trial) >= 3 and not _non_collinear(np.array([pos[ps.index_of(i)] for i in trial])):
                # a collinear addition never helps unless a later point breaks the line
                if any(_non_collinear(np.array([pos[ps.index_of(i)] for i in trial + [r]])) for r in rest):
                    continue
                raise InsufficientPoints(f"set {ps.label} cannot supply 3 non-collinear vertices")
            chosen = trial
        verts.extend((side, pid) for pid in chosen)
    targets = tuple(
        float(sys.target(A.radii[A.index_of(a)], B.radii[B.index_of(b)])) for a, b in Q
    )
    return ActiveConstraintGraph(A, B, Q, tuple(verts), targets)


@dataclass(frozen=True)
class TreeEdge:
    u: int  # positions in tree order
    v: int
    kind: str  # "intra" | "active" | "free"
    index: int  # Q index for active, F index for free, -1 for intra
    length: float  # template length for intra edges, nan otherwise


@dataclass(frozen=True)
class CompleteThreeTree:
    acg: ActiveConstraintGraph
    order: tuple[Vertex, ...]
    parents: tuple[tuple[int, ...], ...]  # per tree position: earlier positions it attaches to
    edges: tuple[TreeEdge, ...]
    F: tuple[Pair, ...]

    @property
    def q(self) -> int:
        return self.acg.q

    @property
    def n(self) -> int:
        return len(self.order)

    @cached_property
    def edge_lookup(self) -> dict[tuple[int, int], TreeEdge]:
        out = {}
        for e in self.edges:
            out[(e.u, e.v)] = e
            out[(e.v, e.u)] = e
        return out

    @cached_property
    def forced(self) -> tuple[int, ...]:
        """Per trilaterated vertex: +1/-1 if fixed by the rigid template, 0 if free."""
        out = []
        for i in range(3, self.n):
            side = self.order[i][0]
            par = self.parents[i]
            if all(self.order[p][0] == side for p in par):
                pts = [self.acg.position(self.order[p]) for p in par] + [self.acg.position(self.order[i])]
                vol = np.linalg.det(np.array([pts[1] - pts[0], pts[2] - pts[0], pts[3] - pts[0]]))
                out.append(1 if vol >= 0 else -1)
            else:
                out.append(0)
        return tuple(out)

    @cached_property
    def free_bits(self) -> tuple[int, ...]:
        return tuple(i for i, f in enumerate(self.forced) if f == 0)

    def flips(self) -> list[FlipSignature]:
        """All flip signatures consistent with the rigid templates, in a fixed order."""
        out = []
        for combo in itertools.product((1, -1), repeat=len(self.free_bits)):
            bits = list(self.forced)
            for slot, s in zip(self.free_bits, combo):
                bits[slot] = s
            out.append(tuple(bits))
        return out

    @cached_property
    def cayley_pairs(self) -> tuple[Pair, ...]:
        return self.acg.Q + self.F

    # -- vertex bookkeeping for batched maps ---------------------------------
    @cached_property
    def _side_slots(self):
        a_slots = [i for i, v in enumerate(self.order) if v[0] == "A"]
        b_slots = [i for i, v in enumerate(self.order) if v[0] == "B"]
        a_tmpl = np.array([self.acg.position(self.order[i]) for i in a_slots])
        b_tmpl = np.array([self.acg.position(self.order[i]) for i in b_slots])
        return a_slots, b_slots, a_tmpl, b_tmpl

    @cached_property
    def _pair_index(self):
        A, B = self.acg.A, self.acg.B
        return (np.array([A.index_of(a) for a, _ in self.cayley_pairs], dtype=int),
                np.array([B.index_of(b) for _, b in self.cayley_pairs], dtype=int))

    def to_text(self) -> str:
        lines = ["order " + " ".join(f"{s}{i}" for s, i in self.order)]
        for pos in range(self.n):
            if pos == 0:
                continue
            par = " ".join(f"{self.order[p][0]}{self.order[p][1]}" for p in self.parents[pos])
            lines.append(f"vertex {self.order[pos][0]}{self.order[pos][1]} <- {par}")
        for e in self.edges:
            u, v = self.order[e.u], self.order[e.v]
            tag = e.kind if e.index < 0 else f"{e.kind}[{e.index}]"
            lines.append(f"edge {u[0]}{u[1]} {v[0]}{v[1]} {tag}")
        return "\n".join(lines)


def find_complete_3tree(acg: ActiveConstraintGraph) -> CompleteThreeTree:
    verts = list(acg.vertices)
    n = len(verts)
    side = [v[0] for v in verts]
    q_edges = {frozenset((acg.vertices.index(("A", a)), acg.vertices.index(("B", b)))) for a, b in acg.Q}
    budget_f = 6 - acg.q

    order: list[int] = []
    parents: list[tuple[int, ...]] = []
    edge_set: set[frozenset] = set()

    def same_side_count(s):
        return sum(1 for x in order if side[x] == s)

    def candidate_parents():
        k = len(order)
        if k < 3:
            yield tuple(order)
            return
        # triangles of a complete 3-tree: the base and the 3 faces created by each new vertex
        seen = set()
        tris = [tuple(order[:3])]
        for pos in range(3, k):
            a, b, c = parents[pos]
            v = order[pos]
            tris.extend(((a, b, v), (a, c, v), (b, c, v)))
        for t in tris:
            key = frozenset(t)
            if key not in seen:
                seen.add(key)
                yield t

    def search(f_used: int) -> bool:
        if len(order) == n:
            return q_edges <= edge_set
        placed = set(order)
        for v in range(n):
            if v in placed:
                continue
            s = side[v]
            k = same_side_count(s)
            for tri in candidate_parents():
                same = [x for x in tri if side[x] == s]
                if len(same) != min(k, 3):
                    continue
                cross = [x for x in tri if side[x] != s]
                new_f = sum(1 for x in cross if frozenset((v, x)) not in q_edges)
                if f_used + new_f > budget_f:
                    continue
                new_edges = {frozenset((v, x)) for x in tri}
                # every Q edge with both endpoints placed must already be a tree edge
                ok = True
                for e in q_edges:
                    if v in e:
                        other = next(iter(e - {v}))
                        if other in placed and e not in new_edges:
                            ok = False
                            break
                if not ok:
                    continue
                order.append(v)
                parents.append(tuple(tri))
                edge_set.update(new_edges)
                if search(f_used + new_f):
                    return True
                order.pop()
                parents.pop()
                edge_set.difference_update(new_edges)
        return False

    if not search(0):
        raise NotNice(f"no complete 3-tree for Q={acg.Q}")

    pos_of = {v: i for i, v in enumerate(order)}
    tree_parents = tuple(tuple(pos_of[p] for p in par) for par in parents)
    edges = []
    F: list[Pair] = []
    for i in range(1, n):
        for p in tree_parents[i]:
            u, w = verts[order[p]], verts[order[i]]
            if u[0] == w[0]:
                edges.append(TreeEdge(p, i, "intra", -1, acg.intra_length(u, w)))
                continue
            a, b = (u[1], w[1]) if u[0] == "A" else (w[1], u[1])
            key = frozenset((("A", a), ("B", b)))
            if key in acg.q_index:
                edges.append(TreeEdge(p, i, "active", acg.q_index[key], math.nan))
            else:
                edges.append(TreeEdge(p, i, "free", len(F), math.nan))
                F.append((a, b))
    if len(edges) != 3 * n - 6 or len(F) != 6 - acg.q:
        raise NotNice("tree search produced an inconsistent edge count")
    return CompleteThreeTree(acg, tuple(verts[i] for i in order), tree_parents, tuple(edges), tuple(F))


# --- forward map ------------------------------------------------------------

def cayley_of_poses(tree: CompleteThreeTree, poses) -> np.ndarray:
    """Forward map for an ``(N, 6)`` array of poses -> ``(N, 6)`` Cayley coordinates."""
    poses = np.atleast_2d(np.asarray(poses, dtype=float))
    ia, ib = tree._pair_index
    placed = place(poses, tree.acg.B.positions[ib])
    return np.linalg.norm(tree.acg.A.positions[ia][None, :, :] - placed, axis=2)


def forward_map(config: Configuration, tree: CompleteThreeTree) -> CayleyPoint:
    c = cayley_of_poses(tree, config.pose.as_array())[0]
    return CayleyPoint.from_array(c, tree.q)


# --- inverse map ------------------------------------------------------------

def trilaterate(p1, p2, p3, d1, d2, d3, sign: int = 1) -> np.ndarray:
    """Point at distances d1, d2, d3 from p1, p2, p3; ``sign`` picks the mirror branch."""
    pts, ok = _trilaterate_batch(
        np.asarray(p1, float)[None], np.asarray(p2, float)[None], np.asarray(p3, float)[None],
        np.atleast_1d(float(d1)), np.atleast_1d(float(d2)), np.atleast_1d(float(d3)),
        np.atleast_1d(1.0 if sign >= 0 else -1.0),
    )
    if not ok[0]:
        raise NoRealSolution("no real trilateration solution")
    return pts[0]


def _trilaterate_batch(p1, p2, p3, d1, d2, d3, sign):
    e21 = p2 - p1
    d = np.linalg.norm(e21, axis=1)
    ok = d > ZERO_TOL
    d_safe = np.where(ok, d, 1.0)
    ex = e21 / d_safe[:, None]
    v31 = p3 - p1
    i = np.einsum("ij,ij->i", ex, v31)
    ey_raw = v31 - i[:, None] * ex
    j = np.linalg.norm(ey_raw, axis=1)
    ok &= j > ZERO_TOL
    j_safe = np.where(j > ZERO_TOL, j, 1.0)
    ey = ey_raw / j_safe[:, None]
    ez = np.cross(ex, ey)
    x = (d1 ** 2 - d2 ** 2 + d_safe ** 2) / (2 * d_safe)
    y = (d1 ** 2 - d3 ** 2 + i ** 2 + j_safe ** 2) / (2 * j_safe) - (i / j_safe) * x
    z2 = d1 ** 2 - x ** 2 - y ** 2
    ok &= z2 >= -ZERO_TOL
    z = sign * np.sqrt(np.maximum(z2, 0.0))
    pts = p1 + x[:, None] * ex + y[:, None] * ey + z[:, None] * ez
    return pts, ok


def _edge_lengths(tree: CompleteThreeTree, C: np.ndarray, u: int, v: int) -> np.ndarray:
    e = tree.edge_lookup[(u, v)]
    if e.kind == "intra":
        return np.full(len(C), e.length)
    col = e.index if e.kind == "active" else tree.q + e.index
    return C[:, col]


def _realize_positions(tree: CompleteThreeTree, C: np.ndarray, signs: np.ndarray):
    """Tree vertex coordinates in the canonical frame; ``signs`` is ``(N, n-3)``."""
    N = len(C)
    P = np.zeros((N, tree.n, 3))
    d01 = _edge_lengths(tree, C, 0, 1)
    d02 = _edge_lengths(tree, C, 0, 2)
    d12 = _edge_lengths(tree, C, 1, 2)
    ok = d01 > ZERO_TOL
    d01s = np.where(ok, d01, 1.0)
    x = (d01s ** 2 + d02 ** 2 - d12 ** 2) / (2 * d01s)
    y2 = d02 ** 2 - x ** 2
    ok &= y2 >= -ZERO_TOL
    P[:, 1, 0] = d01
    P[:, 2, 0] = x
    P[:, 2, 1] = np.sqrt(np.maximum(y2, 0.0))
    for pos in range(3, tree.n):
        a, b, c = tree.parents[pos]
        pts, good = _trilaterate_batch(
            P[:, a], P[:, b], P[:, c],
            _edge_lengths(tree, C, a, pos), _edge_lengths(tree, C, b, pos), _edge_lengths(tree, C, c, pos),
            signs[:, pos - 3],
        )
        P[:, pos] = pts
        ok &= good
    return P, ok


def _kabsch(template: np.ndarray, Y: np.ndarray):
    """Proper rotations R and translations t with ``Y ~ R @ template + t``; returns (R, t, max residual)."""
    mx = template.mean(axis=0)
    my = Y.mean(axis=1)
    X0 = template - mx
    Y0 = Y - my[:, None, :]
    H = np.einsum("ki,nkj->nij", X0, Y0)
    U, _, Vt = np.linalg.svd(H)
    V = np.swapaxes(Vt, 1, 2)
    det = np.linalg.det(V @ np.swapaxes(U, 1, 2))
    D = np.zeros((len(Y), 3, 3))
    D[:, 0, 0] = 1.0
    D[:, 1, 1] = 1.0
    D[:, 2, 2] = np.where(det < 0, -1.0, 1.0)
    R = V @ D @ np.swapaxes(U, 1, 2)
    t = my - np.einsum("nij,j->ni", R, mx)
    fit = np.einsum("nij,kj->nki", R, template) + t[:, None, :]
    res = np.max(np.linalg.norm(fit - Y, axis=2), axis=1)
    return R, t, res


def realize_batch(tree: CompleteThreeTree, C, flip) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inverse map for many Cayley points.

    ``flip`` is one signature or an ``(N, n-3)`` array. Returns ``(poses, ok, residual)``
    where ``ok`` is False for points without a real realization and ``residual`` is the
    worst template superposition error (over both sets).
    """
    C = np.atleast_2d(np.asarray(C, dtype=float))
    N = len(C)
    signs = np.broadcast_to(np.asarray(flip, dtype=float), (N, tree.n - 3)) if tree.n > 3 \
        else np.zeros((N, 0))
    P, ok = _realize_positions(tree, C, signs)
    a_slots, b_slots, a_tmpl, b_tmpl = tree._side_slots
    RA, tA, resA = _kabsch(a_tmpl, P[:, a_slots])
    RB, tB, resB = _kabsch(b_tmpl, P[:, b_slots])
    RAt = np.swapaxes(RA, 1, 2)
    R = RAt @ RB
    t = np.einsum("nij,nj->ni", RAt, tB - tA)
    poses = np.concatenate([t, matrix_to_angles(R)], axis=1)
    return poses, ok, np.maximum(resA, resB)


def realize(c: CayleyPoint, tree: CompleteThreeTree, flip: FlipSignature) -> Configuration:
    poses, ok, res = realize_batch(tree, c.as_array()[None], flip)
    if not ok[0]:
        raise NoRealPreimage(f"no real pre-image for {c} in flip {flip}")
    if res[0] > 1e-6:
        raise SuperpositionFailure(f"template superposition residual {res[0]:.3g}")
    return Configuration(tree.acg.A, tree.acg.B, Pose.from_array(poses[0]))


def realizable(tree: CompleteThreeTree, C) -> np.ndarray:
    """True where every triangle/tetrahedron of the tree has a real embedding (flip independent)."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    _, ok = _realize_positions(tree, C, np.ones((len(C), max(tree.n - 3, 0))))
    return ok


# --- flips ------------------------------------------------------------------

def tree_vertex_positions(tree: CompleteThreeTree, poses) -> np.ndarray:
    """Coordinates of the tree vertices for configurations given as poses, ``(N, n, 3)``."""
    poses = np.atleast_2d(np.asarray(poses, dtype=float))
    a_slots, b_slots, a_tmpl, b_tmpl = tree._side_slots
    out = np.empty((len(poses), tree.n, 3))
    out[:, a_slots] = a_tmpl[None]
    out[:, b_slots] = place(poses, b_tmpl)
    return out


def signed_volumes(tree: CompleteThreeTree, poses) -> np.ndarray:
    P = tree_vertex_positions(tree, poses)
    vols = np.empty((len(P), tree.n - 3))
    for pos in range(3, tree.n):
        a, b, c = tree.parents[pos]
        m = np.stack([P[:, b] - P[:, a], P[:, c] - P[:, a], P[:, pos] - P[:, a]], axis=1)
        vols[:, pos - 3] = np.linalg.det(m)
    return vols


def flips_of_poses(tree: CompleteThreeTree, poses) -> np.ndarray:
    """Sign matrix ``(N, n-3)``; free bits within 1e-12 of zero are reported as 0."""
    vols = signed_volumes(tree, poses)
    s = np.where(np.abs(vols) <= ZERO_TOL, 0, np.sign(vols)).astype(int)
    forced = np.array(tree.forced, dtype=int)
    fixed = forced != 0
    s[:, fixed] = forced[fixed]
    return s


def flip_of(config: Configuration, tree: CompleteThreeTree) -> FlipSignature:
    s = flips_of_poses(tree, config.pose.as_array())[0]
    if np.any(s == 0):
        raise ZeroVolume("configuration is not in generic position for this tree")
    return tuple(int(x) for x in s)


# --- base space -------------------------------------------------------------

@dataclass(frozen=True)
class CayleyBox:
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    @property
    def dim(self) -> int:
        return len(self.lower)

    def contains(self, free) -> np.ndarray:
        free = np.atleast_2d(free)
        lo, hi = np.array(self.lower), np.array(self.upper)
        return np.all((free >= lo - LENGTH_TOL) & (free <= hi + LENGTH_TOL), axis=1)


def cayley_bounds(tree: CompleteThreeTree, sys: ConstraintSystem | None = None) -> CayleyBox:
    """Triangle-inequality bounds on the free Cayley parameters.

    Fixed lengths are all intra-set pairs and the Q targets. Upper bounds are
    shortest fixed-length paths; lower bounds come from iterated triangle
    smoothing. With ``sys`` the collision bound also floors each free pair.
    """
    acg = tree.acg
    verts = list(tree.order)
    n = len(verts)
    U = np.full((n, n), np.inf)
    L = np.zeros((n, n))
    np.fill_diagonal(U, 0.0)
    for i in range(n):
        for j in range(i + 1, n):
            if verts[i][0] == verts[j][0]:
                d = acg.intra_length(verts[i], verts[j])
                U[i, j] = U[j, i] = L[i, j] = L[j, i] = d
    for (a, b), tgt in zip(acg.Q, acg.targets):
        i, j = verts.index(("A", a)), verts.index(("B", b))
        U[i, j] = U[j, i] = L[i, j] = L[j, i] = tgt
    if sys is not None:
        for a, b in tree.F:
            i, j = verts.index(("A", a)), verts.index(("B", b))
            cb = float(sys.collision_bound(acg.A.radii[acg.A.index_of(a)], acg.B.radii[acg.B.index_of(b)]))
            L[i, j] = L[j, i] = max(L[i, j], cb)
    for k in range(n):
        U = np.minimum(U, U[:, k:k + 1] + U[k:k + 1, :])
    for _ in range(n):
        # L[i,j] >= L[i,k] - U[k,j]
        cand = np.max(L[:, :, None] - U[None, :, :], axis=1)
        cand = np.maximum(cand, cand.T)
        newL = np.maximum(L, cand)
        if np.allclose(newL, L):
            break
        L = newL
    lo, hi = [], []
    for a, b in tree.F:
        i, j = verts.index(("A", a)), verts.index(("B", b))
        lo.append(float(L[i, j]))
        hi.append(float(U[i, j]))
        if lo[-1] > hi[-1] + LENGTH_TOL:
            raise EmptyBox(f"Cayley range for pair {(a, b)} is empty: [{lo[-1]}, {hi[-1]}]")
        if not math.isfinite(hi[-1]):
            raise EmptyBox(f"Cayley range for pair {(a, b)} is unbounded")
    return CayleyBox(tuple(lo), tuple(hi))


def base_grid_axes(box: CayleyBox, step: float) -> list[np.ndarray]:
    axes = []
    for lo, hi in zip(box.lower, box.upper):
        span = max(hi - lo, 0.0)
        k = max(1, int(math.floor(span / step + 1e-12)))
        start = lo + (span - (k - 1) * step) / 2.0
        axes.append(start + step * np.arange(k))
    return axes


def base_grid_array(tree: CompleteThreeTree, box: CayleyBox, step: float,
                    realizable_only: bool = True) -> np.ndarray:
    """Lexicographic grid over the box as ``(M, 6)`` Cayley points (active block = targets)."""
    if step <= 0:
        raise ValueError("cayley step must be positive")
    axes = base_grid_axes(box, step)
    if axes:
        grids = np.meshgrid(*axes, indexing="ij")
        free = np.stack([g.ravel() for g in grids], axis=1)
    else:
        free = np.zeros((1, 0))
    C = np.concatenate([np.broadcast_to(np.array(tree.acg.targets), (len(free), tree.q)), free], axis=1)
    if realizable_only:
        C = C[realizable(tree, C)]
    return C


def enumerate_base_grid(tree: CompleteThreeTree, bounds: CayleyBox, cayley_step: float) -> Iterator[CayleyPoint]:
    for row in base_grid_array(tree, bounds, cayley_step):
        yield CayleyPoint.from_array(row, tree.q)
