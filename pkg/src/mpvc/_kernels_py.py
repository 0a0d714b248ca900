"""Reference implementations of the hot kernels (numpy, no compiled code).

The Cython module ``_kernels`` mirrors these functions operation by
operation, so both backends return bit-identical results.
"""

from __future__ import annotations

import numpy as np

OPTIMAL, UNBOUNDED, ITERATION_LIMIT = 0, 1, 2


def pivot(T: np.ndarray, r: int, c: int) -> None:
    """Gauss-Jordan pivot of tableau ``T`` on entry (r, c), in place."""
    T[r] = T[r] / T[r, c]
    col = T[:, c].copy()
    col[r] = 0.0
    T -= np.outer(col, T[r])


def entering_column(T: np.ndarray, ncols: int, tol: float) -> int:
    """Bland's rule: lowest-index column with a negative reduced cost."""
    costs = T[-1, :ncols]
    hits = np.flatnonzero(costs < -tol)
    return int(hits[0]) if hits.size else -1


def leaving_row(T: np.ndarray, c: int, basis: np.ndarray, piv_tol: float) -> int:
    """Minimum-ratio row; ties go to the lowest basic variable index."""
    m = T.shape[0] - 1
    best = -1
    best_ratio = 0.0
    for i in range(m):
        a = T[i, c]
        if a > piv_tol:
            ratio = T[i, -1] / a
            if best < 0 or ratio < best_ratio or (ratio == best_ratio and basis[i] < basis[best]):
                best = i
                best_ratio = ratio
    return best


def simplex_loop(T: np.ndarray, basis: np.ndarray, ncols: int, max_iter: int, tol: float, piv_tol: float):
    """Run Bland-rule simplex (minimisation form) on ``T`` in place.

    Returns ``(status, iterations)``.
    """
    it = 0
    while True:
        c = entering_column(T, ncols, tol)
        if c < 0:
            return OPTIMAL, it
        if it >= max_iter:
            return ITERATION_LIMIT, it
        r = leaving_row(T, c, basis, piv_tol)
        if r < 0:
            return UNBOUNDED, it
        pivot(T, r, c)
        basis[r] = c
        it += 1


def echelon_rank(A: np.ndarray, thresh: float) -> int:
    """Rank by row echelon elimination with partial pivoting, in place."""
    rows, cols = A.shape
    rank = 0
    for c in range(cols):
        if rank == rows:
            break
        sub = np.abs(A[rank:, c])
        k = int(np.argmax(sub)) + rank
        if abs(A[k, c]) <= thresh:
            continue
        if k != rank:
            A[[rank, k]] = A[[k, rank]]
        factors = A[rank + 1 :, c] / A[rank, c]
        A[rank + 1 :] -= np.outer(factors, A[rank])
        rank += 1
    return rank


def delta_dist_l1(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """L1 distance from each (a, b) to {b >= 0, a b <= 0}."""
    quadrant = np.maximum(a, 0.0) + np.maximum(-b, 0.0)
    return np.minimum(quadrant, np.abs(b))


def phi_terms(G: np.ndarray, H: np.ndarray) -> np.ndarray:
    """max{0, -H, min{G, H}} per pair."""
    return np.maximum(np.maximum(0.0, -H), np.minimum(G, H))


def project_omega(y: np.ndarray, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Euclidean projection of each (y, z) onto {y >= 0, z <= 0} U {y = 0}."""
    qy = np.maximum(y, 0.0)
    qz = np.minimum(z, 0.0)
    dq = (y - qy) ** 2 + (z - qz) ** 2
    dl = y * y
    use_line = dl < dq
    return np.where(use_line, 0.0, qy), np.where(use_line, z, qz)
