"""The sets behind a vanishing pair.

* Delta = {(a, b) : b >= 0, a b <= 0}, used with (a, b) = (G_i, H_i) in
  residuals;
* K = {(y, z) : y >= 0, y z <= 0} = {y >= 0, z <= 0} U {y = 0}, the
  component set of Omega in the lifted problem, used with (y, z) = (H_i, G_i).

Both are unions of a closed quadrant and a line, so distances and projections
are closed-form case splits.
"""

from __future__ import annotations

import numpy as np

from ._backend import kernels as _kernels

DEFAULT_TOL = 1e-6


class PointNotInOmega(ValueError):
    pass


def dist_delta_l1(a: float, b: float) -> float:
    """L1 distance from (a, b) to Delta: the nearer of the quadrant and the line b = 0."""
    quadrant = max(a, 0.0) + max(-b, 0.0)
    return min(quadrant, abs(b))


def dist_delta_l1_batch(a, b) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float).reshape(-1)
    b = np.ascontiguousarray(b, dtype=float).reshape(-1)
    return np.asarray(_kernels.delta_dist_l1(a, b))


def phi_residual(G_vals, H_vals) -> float:
    """sum_i max{0, -H_i, min{G_i, H_i}}."""
    G = np.ascontiguousarray(G_vals, dtype=float).reshape(-1)
    H = np.ascontiguousarray(H_vals, dtype=float).reshape(-1)
    if G.shape != H.shape:
        raise ValueError("G and H must have the same length")
    return float(np.sum(_kernels.phi_terms(G, H)))


def project_omega_pair(y: float, z: float) -> tuple[float, float]:
    """Euclidean projection onto K; exact ties go to the quadrant {y >= 0, z <= 0}."""
    qy, qz = max(y, 0.0), min(z, 0.0)
    if y * y < (y - qy) ** 2 + (z - qz) ** 2:
        return 0.0, float(z)
    return float(qy), float(qz)


def project_omega(y, z) -> tuple[np.ndarray, np.ndarray]:
    """Componentwise :func:`project_omega_pair` on arrays."""
    y = np.ascontiguousarray(y, dtype=float).reshape(-1)
    z = np.ascontiguousarray(z, dtype=float).reshape(-1)
    py, pz = _kernels.project_omega(y, z)
    return np.asarray(py), np.asarray(pz)


def in_omega(y: float, z: float, tol: float = 0.0) -> bool:
    return y >= -tol and (y <= tol or z <= tol)


def _case(y: float, z: float, tol: float) -> str:
    if not in_omega(y, z, tol):
        raise PointNotInOmega(f"({y}, {z}) is not in K within {tol}")
    if y > tol:
        return "+-" if z < -tol else "+0"
    if z > tol:
        return "0+"
    if z < -tol:
        return "0-"
    return "00"


def in_limiting_normal(y: float, z: float, xi: float, zeta: float, tol: float = DEFAULT_TOL) -> bool:
    """Membership of (xi, zeta) in the limiting normal cone of K at (y, z).

    ======================  ==============================
    position                cone
    ======================  ==============================
    y > 0, z < 0            xi = 0, zeta = 0
    y > 0, z = 0            xi = 0, zeta >= 0
    y = 0, z = 0            zeta >= 0, xi * zeta = 0
    y = 0, z < 0            xi <= 0, zeta = 0
    y = 0, z > 0            xi free, zeta = 0
    ======================  ==============================

    "xi * zeta = 0" is read as min(|xi|, |zeta|) <= tol.
    """
    case = _case(y, z, tol)
    if case == "+-":
        return abs(xi) <= tol and abs(zeta) <= tol
    if case == "+0":
        return abs(xi) <= tol and zeta >= -tol
    if case == "00":
        return zeta >= -tol and min(abs(xi), abs(zeta)) <= tol
    if case == "0-":
        return xi <= tol and abs(zeta) <= tol
    return abs(zeta) <= tol


def in_frechet_normal(y: float, z: float, xi: float, zeta: float, tol: float = DEFAULT_TOL) -> bool:
    """Same table as :func:`in_limiting_normal` except at (0, 0): xi <= 0, zeta = 0."""
    if _case(y, z, tol) == "00":
        return xi <= tol and abs(zeta) <= tol
    return in_limiting_normal(y, z, xi, zeta, tol)
