"""Decompositions of a 6-cube into intersection elements.

Every element is described in cube-local terms so that one precomputed
table serves every cube of the grid. Points of a cube are addressed by
integer ids:

* ``0..63``  corners, bit ``j`` set when axis ``j`` sits at its upper bound
* ``64..75`` 5-face centers, id ``64 + 2*j + s`` for the face ``x_j = s``

Each element carries a 12-bit mask of the 5-faces that contain it (bit
``2*j + s``), which the traversal uses to skip faces already handled by
processed neighbours.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

M = 6
N_CORNERS = 1 << M
N_FACES = 2 * M
FACE_CENTER0 = N_CORNERS
ALL_FACES = (1 << N_FACES) - 1


def face_bit(axis: int, side: int) -> int:
    return 1 << (2 * axis + side)


def opposite_face(face: int) -> int:
    return face ^ 1


def local_coordinates() -> np.ndarray:
    """Unit-cube coordinates of the 76 addressable points, shape ``(76, 6)``."""
    pts = np.zeros((N_CORNERS + N_FACES, M))
    for c in range(N_CORNERS):
        pts[c] = [(c >> j) & 1 for j in range(M)]
    for j in range(M):
        for s in (0, 1):
            p = np.full(M, 0.5)
            p[j] = s
            pts[FACE_CENTER0 + 2 * j + s] = p
    return pts


LOCAL = local_coordinates()


def _corner_face_mask(corners) -> int:
    mask = 0
    for j in range(M):
        bits = {(c >> j) & 1 for c in corners}
        if bits == {0}:
            mask |= face_bit(j, 0)
        elif bits == {1}:
            mask |= face_bit(j, 1)
    return mask


def _kuhn(base: int, axes) -> list[tuple[int, ...]]:
    """Kuhn triangulation of the facet spanned by ``axes`` at corner ``base``."""
    out = []
    for perm in itertools.permutations(axes):
        v = base
        simplex = [v]
        for a in perm:
            v |= 1 << a
            simplex.append(v)
        out.append(tuple(simplex))
    return out


def _facets(q: int, axes=tuple(range(M)), fixed=0):
    """Yield ``(free_axes, base_corner)`` for every q-facet inside the face given by ``fixed``."""
    for free in itertools.combinations(axes, q):
        others = [a for a in axes if a not in free]
        for bits in itertools.product((0, 1), repeat=len(others)):
            base = fixed
            for a, b in zip(others, bits):
                base |= b << a
            yield free, base


@dataclass(frozen=True)
class SimplexTable:
    """Element vertices as point ids ``(n, q+1)`` and their face masks ``(n,)``."""

    q: int
    vertices: np.ndarray
    faces: np.ndarray

    def __len__(self):
        return len(self.vertices)


@dataclass(frozen=True)
class ParallelepipedTable:
    """Per q-facet: unit-cube center ``(n, 6)``, spanning axes ``(n, q)`` and face masks."""

    q: int
    centers: np.ndarray
    axes: np.ndarray
    faces: np.ndarray

    def __len__(self):
        return len(self.centers)


@lru_cache(maxsize=None)
def simplicial_table(q: int) -> SimplexTable:
    if not 1 <= q <= M:
        raise ValueError("q must be in 1..6")
    verts, faces = [], []
    for free, base in _facets(q):
        for s in _kuhn(base, free):
            verts.append(s)
            faces.append(_corner_face_mask(s))
    return SimplexTable(q, np.array(verts, dtype=np.int64), np.array(faces, dtype=np.int64))


@lru_cache(maxsize=None)
def face_center_table(q: int) -> SimplexTable:
    if not 1 <= q <= M - 1:
        raise ValueError("face-center decomposition needs 1 <= q <= 5")
    verts, faces = [], []
    for j in range(M):
        others = tuple(a for a in range(M) if a != j)
        for s in (0, 1):
            center = FACE_CENTER0 + 2 * j + s
            for free, base in _facets(q - 1, others, s << j):
                for simplex in _kuhn(base, free):
                    verts.append(simplex + (center,))
                    faces.append(face_bit(j, s))
    return SimplexTable(q, np.array(verts, dtype=np.int64), np.array(faces, dtype=np.int64))


@lru_cache(maxsize=None)
def basis_table(q: int) -> ParallelepipedTable:
    if not 1 <= q <= M:
        raise ValueError("q must be in 1..6")
    centers, axes, faces = [], [], []
    for free, base in _facets(q):
        c = LOCAL[base].copy()
        c[list(free)] = 0.5
        centers.append(c)
        axes.append(free)
        corners = [base | sum(1 << a for a in sub) for r in range(q + 1)
                   for sub in itertools.combinations(free, r)]
        faces.append(_corner_face_mask(corners))
    return ParallelepipedTable(q, np.array(centers), np.array(axes, dtype=np.int64),
                               np.array(faces, dtype=np.int64))


def simplicial_count(q: int) -> int:
    return math.comb(M, q) * 2 ** (M - q) * math.factorial(q)


def face_center_count(q: int) -> int:
    return 2 * M * math.comb(M - 1, q - 1) * 2 ** (M - q) * math.factorial(q - 1)


def basis_count(q: int) -> int:
    return math.comb(M, q) * 2 ** (M - q)


# -- pose-space views ----------------------------------------------------------

def cube_points(lower, steps) -> np.ndarray:
    """Pose-space coordinates of the 76 addressable points of each cube, ``(K, 76, 6)``."""
    lower = np.atleast_2d(lower)
    return lower[:, None, :] + LOCAL[None, :, :] * np.asarray(steps)[None, None, :]


def decompose_simplicial(lower, steps, q: int) -> np.ndarray:
    """q-simplices of one cube as pose-space vertex arrays ``(n, q+1, 6)``."""
    pts = cube_points(lower, steps)[0]
    return pts[simplicial_table(q).vertices]


def decompose_face_center(lower, steps, q: int) -> np.ndarray:
    pts = cube_points(lower, steps)[0]
    return pts[face_center_table(q).vertices]


def decompose_basis_local(lower, steps, q: int) -> tuple[np.ndarray, np.ndarray]:
    """Facet centers ``(n, 6)`` and spanning axes ``(n, q)`` of one cube."""
    t = basis_table(q)
    return np.asarray(lower)[None, :] + t.centers * np.asarray(steps)[None, :], t.axes


def thick_points(a, b, s: int) -> np.ndarray:
    """The ``s + 1`` equally spaced dividing points of the segments ``a -> b``.

    ``a`` and ``b`` are ``(n, d)``; the result is ``(n, s + 1, d)``.
    """
    if s < 1:
        raise ValueError("need at least one subdivision")
    t = np.linspace(0.0, 1.0, s + 1)
    a, b = np.atleast_2d(a), np.atleast_2d(b)
    return a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
