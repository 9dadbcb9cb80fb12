"""Linear slices of simplices and parallelepipeds in Cayley space."""
from __future__ import annotations

import numpy as np

LAMBDA_TOL = 1e-9
ALPHA_TOL = 1e-9
PIVOT_TOL = 1e-12


def solve_simplices(images: np.ndarray, targets) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Barycentric weights where each simplex meets the active slice.

    ``images`` is ``(n, q+1, 6)`` Cayley vertices with the active block first.
    Returns ``(weights (n, q+1), accepted (n,), singular (n,))``.
    """
    images = np.asarray(images, dtype=float)
    n, k, _ = images.shape
    q = k - 1
    targets = np.broadcast_to(np.asarray(targets, dtype=float), (n, q))
    if q == 1:
        # closed form keeps the common case cheap
        a0, a1 = images[:, 0, 0], images[:, 1, 0]
        den = a1 - a0
        singular = np.abs(den) < PIVOT_TOL
        lam1 = np.where(singular, np.nan, (targets[:, 0] - a0) / np.where(singular, 1.0, den))
        w = np.stack([1.0 - lam1, lam1], axis=1)
    else:
        A = np.ones((n, k, k))
        A[:, 1:, :] = np.swapaxes(images[:, :, :q], 1, 2)
        rhs = np.concatenate([np.ones((n, 1)), targets], axis=1)
        singular = np.abs(np.linalg.det(A)) < PIVOT_TOL
        A[singular] = np.eye(k)
        w = np.linalg.solve(A, rhs[..., None])[..., 0]
        w[singular] = np.nan
    accepted = ~singular & np.all(w >= -LAMBDA_TOL, axis=1)
    return w, accepted, singular


def intersect_simplex_slice(images, targets):
    """Point of the simplex with active block equal to ``targets``, or None.

    The returned point has its active block set to ``targets`` exactly.
    """
    images = np.asarray(images, dtype=float)
    targets = np.atleast_1d(np.asarray(targets, dtype=float))
    w, ok, _ = solve_simplices(images[None], targets[None])
    if not ok[0]:
        return None
    point = w[0] @ images
    point[: len(targets)] = targets
    return point


def solve_parallelepipeds(centers, bases, targets) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Coefficients alpha with ``center_active + sum alpha_j basis_j_active = targets``.

    ``centers`` ``(n, 6)``, ``bases`` ``(n, q, 6)``. Returns ``(alpha, accepted, singular)``.
    """
    centers = np.asarray(centers, dtype=float)
    bases = np.asarray(bases, dtype=float)
    n, q, _ = bases.shape
    targets = np.broadcast_to(np.asarray(targets, dtype=float), (n, q))
    A = np.swapaxes(bases[:, :, :q], 1, 2)
    rhs = targets - centers[:, :q]
    singular = np.abs(np.linalg.det(A)) < PIVOT_TOL
    A = A.copy()
    A[singular] = np.eye(q)
    alpha = np.linalg.solve(A, rhs[..., None])[..., 0]
    alpha[singular] = np.nan
    accepted = ~singular & np.all(np.abs(alpha) <= 1.0 + ALPHA_TOL, axis=1)
    return alpha, accepted, singular


def intersect_parallelepiped_slice(center, basis, targets):
    center = np.asarray(center, dtype=float)
    basis = np.atleast_2d(np.asarray(basis, dtype=float))
    targets = np.atleast_1d(np.asarray(targets, dtype=float))
    alpha, ok, _ = solve_parallelepipeds(center[None], basis[None], targets[None])
    if not ok[0]:
        return None
    point = center + alpha[0] @ basis
    point[: len(targets)] = targets
    return point
