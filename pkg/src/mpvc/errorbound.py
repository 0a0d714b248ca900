"""Residuals, distance to the feasible set and an empirical error-bound modulus.

The residual at x is

    |h(x)|_1 + |g(x)+|_1 + sum_i dist_Delta(G_i(x), H_i(x)),

and a local error bound asks for dist(x, C) <= c * residual(x) near a
feasible point. The distance oracle here returns upper bounds, so a
reported modulus can only err on the large side.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace

import numpy as np

from .expr import BinOp, Const, Pow, Var
from .geometry import dist_delta_l1_batch
from .model import InfeasiblePointError, ProblemInstance, constraint_values, constraint_values_batch, feasible_mask, is_feasible

FEAS_TOL = 1e-9
GRID_STEP = 1e-2
GRID_HALF_WIDTH = 5.0
REFINE_TO = 1e-4
MAX_GRID_DIM = 3
RATIO_FLOOR = 1e-12
CHUNK = 200_000
METHODS = ("grid", "penalty")


class NoFeasiblePointFound(RuntimeError):
    pass


def residual(prob: ProblemInstance, x) -> float:
    g, h, H, G = constraint_values(prob, x)
    return float(np.sum(np.abs(h)) + np.sum(np.maximum(g, 0.0)) + np.sum(dist_delta_l1_batch(G, H)))


def residual_batch(prob: ProblemInstance, X) -> np.ndarray:
    g, h, H, G = constraint_values_batch(prob, X)
    N = g.shape[0]
    dd = dist_delta_l1_batch(G.ravel(), H.ravel()).reshape(N, -1) if prob.q else np.zeros((N, 0))
    return np.sum(np.abs(h), axis=1) + np.sum(np.maximum(g, 0.0), axis=1) + np.sum(dd, axis=1)


# --------------------------------------------------------------------------
# grid oracle


def _nearest_in_box(prob, x: np.ndarray, centre: np.ndarray, half: float, step: float):
    """Nearest feasible point to x among lattice points step*Z^n in the box."""
    lo = np.ceil((centre - half) / step - 1e-9).astype(np.int64)
    hi = np.floor((centre + half) / step + 1e-9).astype(np.int64)
    axes = [np.arange(a, b + 1) * step for a, b in zip(lo, hi)]
    best, best_d = None, np.inf
    # chunk over the first axis so that large boxes stay within memory
    per_slice = int(np.prod([len(a) for a in axes[1:]])) if len(axes) > 1 else 1
    rows = max(1, CHUNK // max(per_slice, 1))
    for start in range(0, len(axes[0]), rows):
        grids = np.meshgrid(axes[0][start : start + rows], *axes[1:], indexing="ij")
        P = np.stack([gr.ravel() for gr in grids], axis=1)
        P = P[feasible_mask(prob, P, FEAS_TOL)]
        if P.shape[0] == 0:
            continue
        d = np.linalg.norm(P - x, axis=1)
        j = int(np.argmin(d))
        if d[j] < best_d:
            best, best_d = P[j], float(d[j])
    return best, best_d


def _bisect_segment(prob, x: np.ndarray, w: np.ndarray, tol: float) -> np.ndarray:
    """Move w towards x while it stays feasible, down to segment length tol."""
    lo, hi = 0.0, 1.0  # hi: known feasible fraction of the way from x to w
    length = float(np.linalg.norm(w - x))
    while (hi - lo) * length > tol:
        mid = 0.5 * (lo + hi)
        if is_feasible(prob, x + mid * (w - x), FEAS_TOL):
            hi = mid
        else:
            lo = mid
    return x + hi * (w - x)


def nearest_feasible_grid(prob: ProblemInstance, x, *, step: float = GRID_STEP, half_width: float = GRID_HALF_WIDTH) -> np.ndarray:
    """A feasible point near x: lattice search, local lattice refinement, segment bisection."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size > MAX_GRID_DIM:
        raise ValueError(f"grid method needs n <= {MAX_GRID_DIM}, got {x.size}")
    if is_feasible(prob, x, FEAS_TOL):
        return x.copy()
    best, best_d = None, np.inf
    half = 5 * step
    while True:
        half = min(half, half_width)
        best, best_d = _nearest_in_box(prob, x, x, half, step)
        # every lattice point closer than `half` lies in the box
        if best is not None and best_d <= half or half >= half_width:
            break
        half *= 2.0
    if best is None:
        raise NoFeasiblePointFound(f"no feasible lattice point within half-width {half_width} of {list(x)}")
    fine = step
    while fine > REFINE_TO * (1 + 1e-9):
        coarse, fine = fine, fine / 10.0
        cand, d = _nearest_in_box(prob, x, best, 2.0 * coarse, fine)
        if cand is not None and d < best_d:
            best, best_d = cand, d
    cand = _bisect_segment(prob, x, best, REFINE_TO)
    return cand if np.linalg.norm(cand - x) < best_d else best


# --------------------------------------------------------------------------
# penalty oracle


def _distance_problem(prob: ProblemInstance, x: np.ndarray) -> ProblemInstance:
    terms = [Pow(BinOp("-", Var(j, name), Const(float(x[j]))), 2) for j, name in enumerate(prob.var_names)]
    obj = terms[0]
    for t in terms[1:]:
        obj = BinOp("+", obj, t)
    return replace(prob, objective=BinOp("*", Const(0.5), obj), name=f"{prob.name}:distance")


def nearest_feasible_penalty(prob: ProblemInstance, x, *, radius: float = GRID_HALF_WIDTH) -> np.ndarray:
    """Approximate nearest point from the penalty scheme applied to 1/2 |w - x|^2.

    The result is only feasible up to O(1/k); it is a heuristic, not a bound.
    """
    from .penalty import PenaltyConfig, solve_penalty

    x = np.asarray(x, dtype=float).reshape(-1)
    if is_feasible(prob, x, FEAS_TOL):
        return x.copy()
    dprob = _distance_problem(prob, x)
    trace = solve_penalty(dprob, PenaltyConfig(anchor=tuple(x), radius=radius), x)
    return trace.final.point.x


def dist_to_feasible(prob: ProblemInstance, x, method: str = "grid") -> float:
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    x = np.asarray(x, dtype=float).reshape(-1)
    w = nearest_feasible_grid(prob, x) if method == "grid" else nearest_feasible_penalty(prob, x)
    return float(np.linalg.norm(w - x))


# --------------------------------------------------------------------------
# modulus


@dataclass(frozen=True)
class ErrorBoundReport:
    center: tuple[float, ...]
    delta: float
    samples: int
    seed: int
    method: str
    points: np.ndarray
    residuals: np.ndarray
    distances: np.ndarray  # NaN for feasible samples
    ratios: np.ndarray  # NaN where residual <= RATIO_FLOOR

    @property
    def feasible_count(self) -> int:
        return int(np.sum(np.isnan(self.distances)))

    @property
    def vacuous(self) -> bool:
        return not np.any(np.isfinite(self.ratios))

    @property
    def sup_ratio(self) -> float | None:
        return None if self.vacuous else float(np.nanmax(self.ratios))

    def to_dict(self) -> dict:
        def num(v):
            return None if not np.isfinite(v) else float(v)

        return {
            "center": list(self.center),
            "delta": self.delta,
            "sample_radius": self.delta / 2.0,
            "samples": self.samples,
            "seed": self.seed,
            "method": self.method,
            "feasible_samples": self.feasible_count,
            "vacuous": self.vacuous,
            "sup_ratio": self.sup_ratio,
            "rows": [
                {"point": [float(v) for v in p], "residual": float(r), "distance": num(d), "ratio": num(q)}
                for p, r, d, q in zip(self.points, self.residuals, self.distances, self.ratios)
            ],
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n = self.points.shape[1] if self.points.ndim == 2 else 0
        w.writerow([*(f"x{j + 1}" for j in range(n)), "residual", "distance", "ratio"])
        for p, r, d, q in zip(self.points, self.residuals, self.distances, self.ratios):
            w.writerow([*(repr(float(v)) for v in p), repr(float(r)), repr(float(d)), repr(float(q))])
        return buf.getvalue()


def sample_ball(center, radius: float, count: int, seed: int) -> np.ndarray:
    """Uniform samples in the Euclidean ball."""
    c = np.asarray(center, dtype=float).reshape(-1)
    rng = np.random.default_rng(seed)
    d = rng.standard_normal((count, c.size))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = radius * rng.random(count) ** (1.0 / c.size)
    return c + d * r[:, None]


def estimate_modulus(
    prob: ProblemInstance,
    center,
    delta: float,
    samples: int = 200,
    seed: int = 0,
    method: str = "grid",
) -> ErrorBoundReport:
    """Sample B(center, delta/2) and record dist/residual at infeasible samples."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    center = np.asarray(center, dtype=float).reshape(-1)
    if not is_feasible(prob, center, FEAS_TOL):
        raise InfeasiblePointError("center must be feasible")
    X = sample_ball(center, delta / 2.0, samples, seed)
    res = residual_batch(prob, X)
    feas = feasible_mask(prob, X, FEAS_TOL)
    dist = np.full(samples, np.nan)
    ratio = np.full(samples, np.nan)
    for i in np.flatnonzero(~feas):
        dist[i] = dist_to_feasible(prob, X[i], method)
        if res[i] > RATIO_FLOOR:
            ratio[i] = dist[i] / res[i]
    return ErrorBoundReport(tuple(float(v) for v in center), float(delta), samples, seed, method, X, res, dist, ratio)


def two_radius_stability(prob: ProblemInstance, center, delta: float, samples: int = 200, seed: int = 0) -> dict:
    """sup ratios at delta and delta/2 and their quotient (larger over smaller)."""
    a = estimate_modulus(prob, center, delta, samples, seed)
    b = estimate_modulus(prob, center, delta / 2.0, samples, seed)
    sa, sb = a.sup_ratio, b.sup_ratio
    factor = None if not sa or not sb else max(sa, sb) / min(sa, sb)
    return {"sup_ratio": sa, "sup_ratio_half": sb, "factor": factor, "stable": factor is not None and factor <= 2.0}

