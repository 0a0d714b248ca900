"""Dense linear algebra and linear programming used by every certifier."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ._backend import kernels as _default_kernels

RANK_FLOOR = 1e-12


class IterationLimit(RuntimeError):
    """The simplex method hit its pivot budget."""


class Sign(enum.Enum):
    NONNEG = ">=0"
    FREE = "free"
    ZERO = "=0"


# --------------------------------------------------------------------------
# rank


def rank_with_tol(M, tol: float = 1e-9, kernels=None) -> int:
    """Numerical rank by row echelon form with partial pivoting.

    A pivot counts when its magnitude exceeds ``tol`` times the largest
    initial row norm (and an absolute floor of 1e-12).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    A = np.array(M, dtype=float, ndmin=2, order="C", copy=True)
    if A.size == 0:
        return 0
    scale = float(np.max(np.linalg.norm(A, axis=1)))
    thresh = max(tol * scale, RANK_FLOOR)
    return int((kernels or _default_kernels).echelon_rank(A, thresh))


def null_vector(M) -> np.ndarray:
    """Unit vector spanning the direction of least gain of ``M`` (columns)."""
    A = np.asarray(M, dtype=float)
    _, _, vt = np.linalg.svd(A, full_matrices=True)
    return vt[-1]


# --------------------------------------------------------------------------
# linear programming


class LpStatus(enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"


@dataclass
class LinearProgram:
    """maximize c.v  s.t.  A_eq v = b_eq,  A_le v <= b_le,  lb <= v <= ub."""

    c: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_le: np.ndarray | None = None
    b_le: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    labels: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        nv = self.c.size
        self.A_eq, self.b_eq = _rows(self.A_eq, self.b_eq, nv)
        self.A_le, self.b_le = _rows(self.A_le, self.b_le, nv)
        self.lb = np.zeros(nv) if self.lb is None else np.asarray(self.lb, dtype=float).reshape(nv)
        self.ub = np.full(nv, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).reshape(nv)
        for arr in (self.c, self.A_eq, self.b_eq, self.A_le, self.b_le):
            if not np.all(np.isfinite(arr)):
                raise ValueError("LP data must be finite")

    @property
    def num_vars(self) -> int:
        return self.c.size

    def violation(self, v) -> float:
        """Largest row or bound violation at ``v``."""
        v = np.asarray(v, dtype=float)
        parts = [0.0]
        if self.A_eq.shape[0]:
            parts.append(float(np.max(np.abs(self.A_eq @ v - self.b_eq))))
        if self.A_le.shape[0]:
            parts.append(float(np.max(self.A_le @ v - self.b_le)))
        if v.size:
            parts.append(float(np.max(self.lb - v)))
            parts.append(float(np.max(v - self.ub)))
        return max(parts)


def _rows(A, b, nv):
    if A is None:
        return np.zeros((0, nv)), np.zeros(0)
    b = np.asarray(b, dtype=float).reshape(-1)
    A = np.asarray(A, dtype=float).reshape(b.size, nv)
    return A, b


@dataclass(frozen=True)
class LpOutcome:
    status: LpStatus
    x: np.ndarray | None = None
    value: float | None = None
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


REDUCED_COST_TOL = 1e-10
PIVOT_TOL = 1e-11


def lp_solve(lp: LinearProgram, max_iter: int | None = None, kernels=None) -> LpOutcome:
    """Two-phase tableau simplex with Bland's rule.

    Raises :class:`IterationLimit` if the pivot budget runs out.
    """
    K = kernels or _default_kernels
    nv = lp.num_vars

    # v = offset + D u with u >= 0
    offset = np.zeros(nv)
    cols: list[tuple[int, float]] = []
    bound_rows: list[tuple[int, float]] = []  # (u index, upper bound)
    for j in range(nv):
        lo, hi = lp.lb[j], lp.ub[j]
        if lo > hi:
            return LpOutcome(LpStatus.INFEASIBLE)
        if math.isfinite(lo):
            offset[j] = lo
            cols.append((j, 1.0))
            if math.isfinite(hi):
                bound_rows.append((len(cols) - 1, hi - lo))
        elif math.isfinite(hi):
            offset[j] = hi
            cols.append((j, -1.0))
        else:
            cols.append((j, 1.0))
            cols.append((j, -1.0))
    nu = len(cols)
    D = np.zeros((nv, nu))
    for k, (j, s) in enumerate(cols):
        D[j, k] = s

    A_eq = lp.A_eq @ D
    b_eq = lp.b_eq - lp.A_eq @ offset
    A_le = lp.A_le @ D
    b_le = lp.b_le - lp.A_le @ offset
    if bound_rows:
        extra = np.zeros((len(bound_rows), nu))
        for r, (k, hi) in enumerate(bound_rows):
            extra[r, k] = 1.0
        A_le = np.vstack([A_le, extra])
        b_le = np.concatenate([b_le, [hi for _, hi in bound_rows]])

    me, ml = A_eq.shape[0], A_le.shape[0]
    m = me + ml
    nreal = nu + ml
    A = np.zeros((m, nreal))
    A[:me, :nu] = A_eq
    A[me:, :nu] = A_le
    A[me:, nu:] = np.eye(ml)
    b = np.concatenate([b_eq, b_le])
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0

    basis = np.full(m, -1, dtype=np.int64)
    art_rows = []
    for i in range(m):
        if i >= me and not neg[i]:
            basis[i] = nu + (i - me)
        else:
            art_rows.append(i)
    nart = len(art_rows)
    ntot = nreal + nart
    T = np.zeros((m + 1, ntot + 1))
    T[:m, :nreal] = A
    T[:m, -1] = b
    for k, i in enumerate(art_rows):
        T[i, nreal + k] = 1.0
        basis[i] = nreal + k
    if max_iter is None:
        max_iter = 50 * (m + ntot) + 1000
    scale = max(1.0, float(np.max(np.abs(b))) if m else 1.0)
    iterations = 0

    if nart:
        T[-1, nreal:ntot] = 1.0
        for i in art_rows:
            T[-1] -= T[i]
        status, it = K.simplex_loop(T, basis, ntot, max_iter, REDUCED_COST_TOL, PIVOT_TOL)
        iterations += it
        if status == 2:
            raise IterationLimit(f"phase 1 exceeded {max_iter} pivots")
        if -T[-1, -1] > 1e-9 * scale:
            return LpOutcome(LpStatus.INFEASIBLE, iterations=iterations)
        keep = []
        for i in range(m):
            if basis[i] >= nreal:
                row = np.abs(T[i, :nreal])
                cand = np.flatnonzero(row > 1e-9)
                if cand.size == 0:
                    continue  # redundant row
                K.pivot(T, i, int(cand[0]))
                basis[i] = int(cand[0])
            keep.append(i)
        T = np.ascontiguousarray(np.vstack([T[keep][:, list(range(nreal)) + [ntot]], np.zeros((1, nreal + 1))]))
        basis = np.ascontiguousarray(basis[keep])
        A, b = A[keep], b[keep]
        m = len(keep)

    cost = np.zeros(nreal)
    cost[:nu] = -(lp.c @ D)  # minimise -c.v
    T[-1, :] = 0.0
    T[-1, :nreal] = cost
    if m:
        cb = cost[basis]
        T[-1, :nreal] -= cb @ T[:m, :nreal]
        T[-1, -1] = -(cb @ T[:m, -1])
    status, it = K.simplex_loop(T, basis, nreal, max_iter, REDUCED_COST_TOL, PIVOT_TOL)
    iterations += it
    if status == 2:
        raise IterationLimit(f"phase 2 exceeded {max_iter} pivots")
    if status == 1:
        return LpOutcome(LpStatus.UNBOUNDED, iterations=iterations)

    w = np.zeros(nreal)
    w[basis] = T[:m, -1]
    if m:
        try:
            wb = np.linalg.solve(A[:, basis], b)
            if np.all(wb >= -1e-9 * scale):
                w[basis] = np.maximum(wb, 0.0)
        except np.linalg.LinAlgError:
            pass
    w = np.maximum(w, 0.0)
    v = offset + D @ w[:nu]
    return LpOutcome(LpStatus.OPTIMAL, v, float(lp.c @ v), iterations)


# --------------------------------------------------------------------------
# cones


def _as_signs(signs) -> list[Sign]:
    return [s if isinstance(s, Sign) else Sign(s) for s in signs]


def cone_nonzero(columns: Sequence, signs: Sequence, tol: float = 1e-9, kernels=None) -> np.ndarray | None:
    """Nonzero sign-feasible c with sum_k c_k col_k = 0, or None if only c = 0 exists.

    The result is scaled to ||c||_1 = 1. Nonnegative coefficients are found
    with one LP (maximise their share under the split L1 normalisation);
    if they are forced to zero, a nonzero c can only live in the null space
    of the free columns, which a rank test settles.
    """
    cols = [np.asarray(v, dtype=float).reshape(-1) for v in columns]
    if not cols:
        raise ValueError("at least one column is required")
    n = cols[0].size
    signs = _as_signs(signs)
    if len(signs) != len(cols):
        raise ValueError("one sign per column")
    active = [k for k, s in enumerate(signs) if s is not Sign.ZERO]
    if not active:
        return None

    split: list[tuple[int, float]] = []
    for k in active:
        split.append((k, 1.0))
        if signs[k] is Sign.FREE:
            split.append((k, -1.0))
    A = np.zeros((n + 1, len(split)))
    obj = np.zeros(len(split))
    for j, (k, s) in enumerate(split):
        A[:n, j] = s * cols[k]
        A[n, j] = 1.0
        if signs[k] is Sign.NONNEG:
            obj[j] = 1.0
    b = np.zeros(n + 1)
    b[n] = 1.0
    out = lp_solve(LinearProgram(c=obj, A_eq=A, b_eq=b), kernels=kernels)
    c = np.zeros(len(cols))
    if out.optimal and out.value > tol:
        for j, (k, s) in enumerate(split):
            c[k] += s * out.x[j]
    else:
        free = [k for k in active if signs[k] is Sign.FREE]
        if not free:
            return None
        F = np.column_stack([cols[k] for k in free])
        if rank_with_tol(F.T, tol, kernels=kernels) == len(free):
            return None
        c[free] = null_vector(F)
    return _normalise(c, signs)


def _normalise(c: np.ndarray, signs: list[Sign]) -> np.ndarray | None:
    c = c.copy()
    for k, s in enumerate(signs):
        if s is Sign.ZERO:
            c[k] = 0.0
        elif s is Sign.NONNEG and c[k] < 0:
            c[k] = 0.0
    c[np.abs(c) < 1e-13 * max(1.0, float(np.max(np.abs(c))))] = 0.0
    total = float(np.sum(np.abs(c)))
    if total == 0.0:
        return None
    return c / total


def cone_rays(columns: Sequence, signs: Sequence, cap: int = 64, tol: float = 1e-9, kernels=None):
    """Distinct normalised nonzero elements of the cone, one per LP direction.

    For each coefficient k the split L1-normalised polytope is maximised
    along +c_k (and -c_k when k is free). Returns ``(rays, capped)``.
    """
    cols = [np.asarray(v, dtype=float).reshape(-1) for v in columns]
    signs = _as_signs(signs)
    n = cols[0].size if cols else 0
    active = [k for k, s in enumerate(signs) if s is not Sign.ZERO]
    split: list[tuple[int, float]] = []
    for k in active:
        split.append((k, 1.0))
        if signs[k] is Sign.FREE:
            split.append((k, -1.0))
    rays: list[np.ndarray] = []
    if not split:
        return rays, False
    A = np.zeros((n + 1, len(split)))
    for j, (k, s) in enumerate(split):
        A[:n, j] = s * cols[k]
        A[n, j] = 1.0
    b = np.zeros(n + 1)
    b[n] = 1.0
    directions = [(k, 1.0) for k in active] + [(k, -1.0) for k in active if signs[k] is Sign.FREE]
    capped = False
    for k, direction in directions:
        obj = np.array([direction * s if kk == k else 0.0 for kk, s in split])
        out = lp_solve(LinearProgram(c=obj, A_eq=A, b_eq=b), kernels=kernels)
        if not out.optimal or out.value <= tol:
            continue
        c = np.zeros(len(cols))
        for j, (kk, s) in enumerate(split):
            c[kk] += s * out.x[j]
        c = _normalise(c, signs)
        if c is None or any(np.max(np.abs(c - r)) <= 1e-9 for r in rays):
            continue
        if len(rays) >= cap:
            capped = True
            break
        rays.append(c)
    return rays, capped


# --------------------------------------------------------------------------
# Caratheodory-type reduction


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class ReducedRepresentation:
    base_coeffs: np.ndarray
    kept: tuple[int, ...]  # indices into the original extras
    coeffs: np.ndarray  # coefficients of the kept extras
    residual: float


def caratheodory_reduce(x, base: Sequence, extras: Sequence[tuple], tol: float = 1e-8) -> ReducedRepresentation:
    """Drop extras until base plus the kept extras are linearly independent.

    ``x`` must equal a combination of ``base`` plus ``sum coeff * vector``
    over ``extras``. Kept coefficients keep their original signs.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    n = x.size
    B = np.column_stack([np.asarray(v, float) for v in base]) if len(base) else np.zeros((n, 0))
    vecs = [np.asarray(v, dtype=float).reshape(-1) for v, _ in extras]
    alpha = np.array([float(a) for _, a in extras])
    if np.any(alpha == 0):
        raise PreconditionError("extra coefficients must be nonzero")
    if B.shape[1] and rank_with_tol(B.T) < B.shape[1]:
        raise PreconditionError("base vectors are not linearly independent")
    rest = x - sum((a * v for a, v in zip(alpha, vecs)), np.zeros(n))
    beta = np.linalg.lstsq(B, rest, rcond=None)[0] if B.shape[1] else np.zeros(0)
    if np.linalg.norm(B @ beta - rest) > tol:
        raise PreconditionError("input is not a valid decomposition of x")

    kept = list(range(len(vecs)))
    while kept:
        fam = np.column_stack([B] + [vecs[i][:, None] for i in kept])
        if rank_with_tol(fam.T) == fam.shape[1]:
            break
        dep = null_vector(fam)
        # round-off entries would give absurd step ratios
        dep = np.where(np.abs(dep) > 1e-12 * np.max(np.abs(dep)), dep, 0.0)
        d_extra = dep[B.shape[1] :]
        a = alpha[kept]
        if not np.any(a * d_extra > 0):
            dep, d_extra = -dep, -d_extra
        ratios = [(a[t] / d_extra[t], t) for t in range(len(kept)) if a[t] * d_extra[t] > 0]
        step, t_min = min(ratios)
        alpha[kept] = a - step * d_extra
        beta = beta - step * dep[: B.shape[1]]
        alpha[kept[t_min]] = 0.0
        kept = [i for i in kept if alpha[i] != 0.0 and np.sign(alpha[i]) == np.sign(extras[i][1])]
        # refit coefficients on the surviving family to wash out drift
        fam = np.column_stack([B] + [vecs[i][:, None] for i in kept]) if (B.shape[1] or kept) else np.zeros((n, 0))
        if fam.shape[1]:
            sol = np.linalg.lstsq(fam, x, rcond=None)[0]
            if all(np.sign(sol[B.shape[1] + j]) == np.sign(extras[i][1]) for j, i in enumerate(kept)):
                beta = sol[: B.shape[1]]
                alpha[kept] = sol[B.shape[1] :]

    coeffs = alpha[kept]
    recon = B @ beta + sum((c * vecs[i] for c, i in zip(coeffs, kept)), np.zeros(n))
    residual = float(np.linalg.norm(recon - x))
    if residual > tol:
        raise PreconditionError(f"reduction lost accuracy (residual {residual:.2e})")
    return ReducedRepresentation(beta, tuple(kept), coeffs, residual)


# --------------------------------------------------------------------------


def finite_diff_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-6) -> np.ndarray:
    """Central differences, one coordinate at a time."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=float).reshape(-1)
    out = np.empty(x.size)
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = h
        out[i] = (f(x + e) - f(x - e)) / (2 * h)
    return out
