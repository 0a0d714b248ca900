"""Quadratic penalty on the lifted problem and multiplier recovery.

The lifted problem replaces each vanishing pair by variables (y, z) with
y = H(x), z = G(x) and (y_i, z_i) in K = {y >= 0, yz <= 0}. For a penalty
parameter k and anchor x* with lift (x*, y*, z*),

    F_k = f + k/2 |g+|^2 + k/2 |h|^2 + k/2 |y - H|^2 + k/2 |z - G|^2
            + 1/2 |(x, y, z) - (x*, y*, z*)|^2

is minimised over K^q intersected with a ball of radius ``cfg.radius``.

Two inner solvers are available:

* ``"reduced"`` (default): for fixed x the minimising (y, z) is a single
  projection onto K, so F_k collapses to a function of x alone. That
  function is minimised by a Gauss-Newton scaled step with Armijo
  backtracking. Its cost does not grow with k.
* ``"projected"``: plain projected gradient on (x, y, z), projecting onto
  K and then radially into the ball. The step shrinks like 1/k, so the
  large penalties run out of budget; kept as a reference.
"""

from __future__ import annotations

import csv
import enum
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import stationarity as st
from .geometry import project_omega
from .linalg import Sign
from .model import DEFAULT_TOL_ACT, ProblemInstance, evaluate, partition_indices

log = logging.getLogger(__name__)

DEFAULT_SCHEDULE = tuple(10.0**e for e in range(1, 9))
INNER_METHODS = ("reduced", "projected")
BALL_SLACK = 1e-12
MIN_STEP = 1e-20


class NonFiniteValue(ArithmeticError):
    pass


class InnerStatus(enum.Enum):
    CONVERGED = "converged"
    BUDGET = "budget_exhausted"
    STALLED = "stalled"


@dataclass(frozen=True)
class LiftedPoint:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate([self.x, self.y, self.z])

    @classmethod
    def from_flat(cls, v: np.ndarray, n: int, q: int) -> "LiftedPoint":
        return cls(v[:n].copy(), v[n : n + q].copy(), v[n + q :].copy())


@dataclass(frozen=True)
class PenaltyConfig:
    anchor: tuple[float, ...]
    radius: float = 1.0
    schedule: tuple[float, ...] = DEFAULT_SCHEDULE
    max_inner: int = 500
    armijo_shrink: float = 0.5
    armijo_slope: float = 1e-4
    initial_step: float = 1.0
    inner: str = "reduced"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "anchor", tuple(float(v) for v in self.anchor))
        object.__setattr__(self, "schedule", tuple(float(k) for k in self.schedule))
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if not self.schedule or any(k <= 0 for k in self.schedule):
            raise ValueError("schedule must be a nonempty list of positive values")
        if any(b <= a for a, b in zip(self.schedule, self.schedule[1:])):
            raise ValueError("schedule must be strictly increasing")
        if self.inner not in INNER_METHODS:
            raise ValueError(f"inner must be one of {INNER_METHODS}")
        if not 0 < self.armijo_shrink < 1 or not 0 < self.armijo_slope < 1:
            raise ValueError("Armijo parameters must lie in (0, 1)")


@dataclass(frozen=True)
class PenaltyStep:
    k: float
    point: LiftedPoint
    value: float
    violation: dict[str, float]
    multipliers: st.MultiplierVector
    delta: float
    status: InnerStatus
    iterations: int
    residual: float
    ball_active: bool

    def multiplier_norm(self) -> float:
        m = self.multipliers
        return float(np.linalg.norm(np.concatenate([[m.alpha], m.constraint_part()])))

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "x": [float(v) for v in self.point.x],
            "y": [float(v) for v in self.point.y],
            "z": [float(v) for v in self.point.z],
            "F": self.value,
            "violation": self.violation,
            "multipliers": self.multipliers.to_dict(),
            "delta": self.delta,
            "status": self.status.value,
            "iterations": self.iterations,
            "residual": self.residual,
            "ball_active": self.ball_active,
        }


@dataclass
class PenaltyTrace:
    anchor: np.ndarray
    anchor_value: float
    steps: list[PenaltyStep] = field(default_factory=list)

    @property
    def limit(self) -> st.MultiplierVector | None:
        return self.steps[-1].multipliers if self.steps else None

    @property
    def final(self) -> PenaltyStep:
        return self.steps[-1]

    def to_dict(self) -> dict:
        return {
            "anchor": [float(v) for v in self.anchor],
            "anchor_value": self.anchor_value,
            "steps": [s.to_dict() for s in self.steps],
            "limit_multipliers": self.limit.to_dict() if self.limit is not None else None,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "F", "dist_x", "alpha", "lambda_norm", "mu_norm", "eta_G_norm", "eta_H_norm", "status"])
        for s in self.steps:
            m = s.multipliers
            w.writerow([
                repr(s.k),
                repr(s.value),
                repr(float(np.linalg.norm(s.point.x - self.anchor))),
                repr(float(m.alpha)),
                *(repr(float(np.linalg.norm(v))) for v in (m.lam, m.mu, m.eta_G, m.eta_H)),
                s.status.value,
            ])
        return buf.getvalue()


# --------------------------------------------------------------------------
# lifted objective


def lift(prob: ProblemInstance, x) -> LiftedPoint:
    ev = evaluate(prob, x)
    return LiftedPoint(ev.x.copy(), ev.H.copy(), ev.G.copy())


def _anchor_lift(prob: ProblemInstance, cfg: PenaltyConfig) -> LiftedPoint:
    if len(cfg.anchor) != prob.n:
        raise ValueError(f"anchor has {len(cfg.anchor)} coordinates, problem has {prob.n} variables")
    return lift(prob, cfg.anchor)


def penalty_value_grad(prob: ProblemInstance, cfg: PenaltyConfig, k: float, p: LiftedPoint) -> tuple[float, np.ndarray]:
    """F_k and its gradient in (x, y, z) order."""
    if not k > 0:
        raise ValueError("k must be positive")
    a = _anchor_lift(prob, cfg)
    ev = evaluate(prob, p.x)
    gp = np.maximum(ev.g, 0.0)
    ry = p.y - ev.H
    rz = p.z - ev.G
    dx, dy, dz = p.x - a.x, p.y - a.y, p.z - a.z
    value = (
        ev.f
        + 0.5 * k * (gp @ gp + ev.h @ ev.h + ry @ ry + rz @ rz)
        + 0.5 * (dx @ dx + dy @ dy + dz @ dz)
    )
    gx = ev.grad_f + k * (gp @ ev.grad_g.reshape(prob.m, prob.n) + ev.h @ ev.grad_h.reshape(prob.p, prob.n))
    gx = gx - k * (ry @ ev.grad_H.reshape(prob.q, prob.n) + rz @ ev.grad_G.reshape(prob.q, prob.n)) + dx
    grad = np.concatenate([gx, k * ry + dy, k * rz + dz])
    return float(value), grad


@dataclass
class _Reduced:
    value: float
    grad: np.ndarray
    y: np.ndarray
    z: np.ndarray
    gp: np.ndarray
    h: np.ndarray
    ry: np.ndarray  # y - H, computed without cancellation
    rz: np.ndarray
    y_clamped: np.ndarray
    z_clamped: np.ndarray
    ev: object


def _reduced(prob: ProblemInstance, k: float, x: np.ndarray, a: LiftedPoint) -> _Reduced:
    """F_k at x with (y, z) at their exact minimisers (ball ignored)."""
    ev = evaluate(prob, x)
    cy = (k * ev.H + a.y) / (k + 1.0)
    cz = (k * ev.G + a.z) / (k + 1.0)
    y, z = project_omega(cy, cz)
    y_clamped = y != cy
    z_clamped = z != cz
    ry = np.where(y_clamped, y - ev.H, (a.y - ev.H) / (k + 1.0))
    rz = np.where(z_clamped, z - ev.G, (a.z - ev.G) / (k + 1.0))
    gp = np.maximum(ev.g, 0.0)
    dx, dy, dz = x - a.x, y - a.y, z - a.z
    value = (
        ev.f
        + 0.5 * k * (gp @ gp + ev.h @ ev.h + ry @ ry + rz @ rz)
        + 0.5 * (dx @ dx + dy @ dy + dz @ dz)
    )
    grad = ev.grad_f + k * (gp @ ev.grad_g.reshape(prob.m, prob.n) + ev.h @ ev.grad_h.reshape(prob.p, prob.n))
    grad = grad - k * (ry @ ev.grad_H.reshape(prob.q, prob.n) + rz @ ev.grad_G.reshape(prob.q, prob.n)) + dx
    if not (math.isfinite(value) and np.all(np.isfinite(grad))):
        raise NonFiniteValue(f"F_k or its gradient is not finite at x = {list(x)}")
    return _Reduced(float(value), grad, y, z, gp, ev.h, ry, rz, y_clamped, z_clamped, ev)


def _objective_hessian(prob: ProblemInstance, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    from .expr import grad as expr_grad

    n = x.size
    Hs = np.zeros((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = step
        Hs[:, j] = (expr_grad(prob.objective, x + e) - expr_grad(prob.objective, x - e)) / (2 * step)
    return 0.5 * (Hs + Hs.T)


def _metric(prob: ProblemInstance, k: float, x: np.ndarray, r: _Reduced) -> np.ndarray:
    """Gauss-Newton model of the reduced Hessian, eigenvalues floored at 1."""
    ev = r.ev
    M = _objective_hessian(prob, x) + np.eye(x.size)
    for i in np.flatnonzero(r.gp > 0):
        M += k * np.outer(ev.grad_g[i], ev.grad_g[i])
    for j in range(prob.p):
        M += k * np.outer(ev.grad_h[j], ev.grad_h[j])
    for i in range(prob.q):
        wy = k if r.y_clamped[i] else k / (k + 1.0)
        wz = k if r.z_clamped[i] else k / (k + 1.0)
        M += wy * np.outer(ev.grad_H[i], ev.grad_H[i]) + wz * np.outer(ev.grad_G[i], ev.grad_G[i])
    vals, vecs = np.linalg.eigh(M)
    return (vecs * np.maximum(vals, 1.0)) @ vecs.T


def _ball_dist(x, y, z, a: LiftedPoint) -> float:
    return float(np.sqrt(np.sum((x - a.x) ** 2) + np.sum((y - a.y) ** 2) + np.sum((z - a.z) ** 2)))


def inner_tolerance(k: float) -> float:
    return max(1e-9, 1e-3 / k)


def _minimise_reduced(prob, cfg: PenaltyConfig, k: float, x: np.ndarray, a: LiftedPoint):
    r = _reduced(prob, k, x, a)
    tol = inner_tolerance(k)
    limit = cfg.radius + BALL_SLACK
    ball_active = False
    status = InnerStatus.BUDGET
    it = 0
    while True:
        gnorm = float(np.linalg.norm(r.grad))
        if gnorm <= tol:
            status = InnerStatus.CONVERGED
            break
        if it >= cfg.max_inner:
            break
        d = -np.linalg.solve(_metric(prob, k, x, r), r.grad)
        slope = float(r.grad @ d)
        inside_now = _ball_dist(x, r.y, r.z, a) <= limit
        t = cfg.initial_step
        accepted = None
        while t >= MIN_STEP:
            xt = x + t * d
            rt = _reduced(prob, k, xt, a)
            if inside_now and _ball_dist(xt, rt.y, rt.z, a) > limit:
                ball_active = True
            elif rt.value <= r.value + cfg.armijo_slope * t * slope:
                accepted = (xt, rt)
                break
            t *= cfg.armijo_shrink
        if accepted is None or not accepted[1].value < r.value:
            status = InnerStatus.STALLED
            break
        x, r = accepted
        it += 1
    return x, r, status, it, float(np.linalg.norm(r.grad)), ball_active


def _project_lifted(v: np.ndarray, n: int, q: int, a: LiftedPoint, radius: float) -> tuple[np.ndarray, bool]:
    p = LiftedPoint.from_flat(v, n, q)
    y, z = project_omega(p.y, p.z)
    w = np.concatenate([p.x, y, z])
    centre = a.flat()
    dist = float(np.linalg.norm(w - centre))
    if dist > radius:
        return centre + (w - centre) * (radius / dist), True
    return w, False


def _minimise_projected(prob, cfg: PenaltyConfig, k: float, start: LiftedPoint, a: LiftedPoint):
    n, q = prob.n, prob.q
    v, ball_active = _project_lifted(start.flat(), n, q, a, cfg.radius)
    F, g = penalty_value_grad(prob, cfg, k, LiftedPoint.from_flat(v, n, q))
    tol = inner_tolerance(k)
    status = InnerStatus.BUDGET
    it = 0
    while True:
        w, _ = _project_lifted(v - g, n, q, a, cfg.radius)
        res = float(np.linalg.norm(v - w))
        if res <= tol:
            status = InnerStatus.CONVERGED
            break
        if it >= cfg.max_inner:
            break
        t = cfg.initial_step
        accepted = None
        while t >= MIN_STEP:
            vt, hit = _project_lifted(v - t * g, n, q, a, cfg.radius)
            Ft, gt = penalty_value_grad(prob, cfg, k, LiftedPoint.from_flat(vt, n, q))
            if not math.isfinite(Ft):
                raise NonFiniteValue("F_k is not finite")
            if Ft <= F + cfg.armijo_slope * float(g @ (vt - v)):
                accepted = (vt, Ft, gt, hit)
                break
            t *= cfg.armijo_shrink
        if accepted is None:
            status = InnerStatus.STALLED
            break
        v, F, g, hit = accepted
        ball_active |= hit
        it += 1
    return LiftedPoint.from_flat(v, n, q), F, status, it, res, ball_active


# --------------------------------------------------------------------------
# multipliers


def _scaled_multipliers(k: float, gp, h, ry, rz) -> tuple[st.MultiplierVector, float]:
    lam, mu = k * gp, k * h
    eta_H, eta_G = k * ry, -k * rz  # z-residual enters with the opposite sign in the final orientation
    delta = float(np.sqrt(1.0 + lam @ lam + mu @ mu + eta_H @ eta_H + eta_G @ eta_G))
    mult = st.MultiplierVector(1.0 / delta, lam / delta, mu / delta, eta_G / delta, eta_H / delta)
    return mult, delta


def recover_multipliers(prob: ProblemInstance, cfg: PenaltyConfig, k: float, p: LiftedPoint) -> tuple[st.MultiplierVector, float]:
    """Normalised (alpha, lambda, mu, eta_G, eta_H) and delta at a lifted point.

    Returns the multipliers and delta; the Euclidean norm of the vector
    (alpha, lambda, mu, eta_H, eta_G) is 1 up to rounding.
    """
    if not k > 0:
        raise ValueError("k must be positive")
    ev = evaluate(prob, p.x)
    return _scaled_multipliers(k, np.maximum(ev.g, 0.0), ev.h, p.y - ev.H, p.z - ev.G)


def _violation(gp, h, ry, rz) -> dict[str, float]:
    return {
        "g_plus": float(np.sum(gp**2)),
        "h": float(np.sum(h**2)),
        "y_minus_H": float(np.sum(ry**2)),
        "z_minus_G": float(np.sum(rz**2)),
    }


def solve_penalty(prob: ProblemInstance, cfg: PenaltyConfig, x0) -> PenaltyTrace:
    """Minimise F_k for each k of the schedule, warm starting from the previous k."""
    a = _anchor_lift(prob, cfg)
    x = np.asarray(x0, dtype=float).reshape(-1)
    if x.size != prob.n:
        raise ValueError(f"x0 has {x.size} coordinates, problem has {prob.n} variables")
    if np.linalg.norm(x - a.x) > cfg.radius:
        raise ValueError("x0 must lie in the ball around the anchor")
    trace = PenaltyTrace(a.x.copy(), float(evaluate(prob, a.x).f))
    current = None
    for k in cfg.schedule:
        if cfg.inner == "reduced":
            x, r, status, iters, res, ball = _minimise_reduced(prob, cfg, k, x, a)
            point = LiftedPoint(x.copy(), r.y.copy(), r.z.copy())
            value = r.value
            gp, h, ry, rz = r.gp, r.h, r.ry, r.rz
        else:
            if current is None:
                r0 = _reduced(prob, k, x, a)
                current = LiftedPoint(x.copy(), r0.y, r0.z)
            point, value, status, iters, res, ball = _minimise_projected(prob, cfg, k, current, a)
            ev = evaluate(prob, point.x)
            gp, h, ry, rz = np.maximum(ev.g, 0.0), ev.h, point.y - ev.H, point.z - ev.G
        current = point
        x = point.x
        mult, delta = _scaled_multipliers(k, gp, h, ry, rz)
        if status is not InnerStatus.CONVERGED:
            log.info("k=%g: inner solver %s after %d iterations (residual %.3g)", k, status.value, iters, res)
        trace.steps.append(PenaltyStep(k, point, value, _violation(gp, h, ry, rz), mult, delta, status, iters, res, ball))
    return trace


# --------------------------------------------------------------------------
# checks on the limit


def limit_fj_check(prob: ProblemInstance, x, mult: st.MultiplierVector, tol: float = 1e-4, *, tol_act: float = DEFAULT_TOL_ACT) -> dict:
    """Residual and sign-pattern test of the Fritz John M-system at x.

    Signs are checked up to ``tol``; the branch choice that fits best is
    reported.
    """
    ev = evaluate(prob, x)
    part = partition_indices(prob, x, tol_act)
    residual = st.stationarity_residual(ev, mult)
    c = mult.constraint_part()
    best = None
    for br in st.branches(part, "M"):
        worst = 0.0
        for val, sign in zip(c, st.sign_pattern(prob, part, "M", br).flat()):
            if sign is Sign.ZERO:
                worst = max(worst, abs(val))
            elif sign is Sign.NONNEG:
                worst = max(worst, -val)
        worst = max(worst, -mult.alpha)
        if best is None or worst < best[0]:
            best = (worst, br)
    sign_violation, branch = best
    return {
        "residual": residual,
        "sign_violation": float(sign_violation),
        "branch": {str(i + 1): s for i, s in sorted(branch.items())},
        "ok": bool(residual <= tol and sign_violation <= tol),
    }


@dataclass(frozen=True)
class EnhancedTraceReport:
    vacuous: bool
    conditions: tuple[str, ...]
    rows: tuple[tuple[float, dict[str, bool]], ...]

    @property
    def all_hold(self) -> bool:
        return all(all(r.values()) for _, r in self.rows)

    def holds_at(self, condition: str) -> list[float]:
        return [k for k, r in self.rows if r.get(condition, False)]

    def to_dict(self) -> dict:
        return {
            "vacuous": self.vacuous,
            "conditions": list(self.conditions),
            "rows": [{"k": k, **r} for k, r in self.rows],
            "all_hold": self.all_hold,
        }


def verify_enhanced_on_trace(
    prob: ProblemInstance,
    x_anchor,
    limit_mult: st.MultiplierVector,
    trace: PenaltyTrace,
    *,
    tail: int | None = None,
    zero_tol: float = 1e-6,
) -> EnhancedTraceReport:
    """Test the descent and strict sign conditions at the trace's last iterates.

    Each condition is reported per iterate, so a violation shows where it
    happens rather than failing the whole check.
    """
    if not trace.steps:
        raise ValueError("trace is empty")
    steps = trace.steps[-(tail or max(1, len(trace.steps) // 2)) :]
    m = limit_mult
    if m.is_zero(zero_tol):
        return EnhancedTraceReport(True, (), tuple((s.k, {}) for s in steps))
    f_star = float(evaluate(prob, x_anchor).f)
    conds = ["descent"]
    conds += [f"lambda{i + 1}" for i in np.flatnonzero(m.lam > zero_tol)]
    conds += [f"mu{j + 1}" for j in np.flatnonzero(np.abs(m.mu) > zero_tol)]
    conds += [f"eta_H{i + 1}" for i in np.flatnonzero(np.abs(m.eta_H) > zero_tol)]
    conds += [f"eta_G{i + 1}" for i in np.flatnonzero(m.eta_G > zero_tol)]
    rows = []
    for s in steps:
        ev = evaluate(prob, s.point.x)
        row = {"descent": bool(ev.f < f_star)}
        for c in conds[1:]:
            if c.startswith("lambda"):
                i = int(c[6:]) - 1
                row[c] = bool(m.lam[i] * ev.g[i] > 0)
            elif c.startswith("mu"):
                j = int(c[2:]) - 1
                row[c] = bool(m.mu[j] * ev.h[j] > 0)
            elif c.startswith("eta_H"):
                i = int(c[5:]) - 1
                row[c] = bool(m.eta_H[i] * ev.H[i] < 0)
            else:
                i = int(c[5:]) - 1
                row[c] = bool(m.eta_G[i] * ev.G[i] > 0)
        rows.append((s.k, row))
    return EnhancedTraceReport(False, tuple(conds), tuple(rows))
