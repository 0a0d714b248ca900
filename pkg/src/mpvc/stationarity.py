"""Multiplier systems for W/M/S and Fritz John stationarity, witness sequences
for the enhanced conditions, and decomposition of normal vectors.

Every system has the shape

    alpha grad f + sum lam_i grad g_i + sum mu_j grad h_j
        + sum etaG_i grad G_i - sum etaH_i grad H_i = 0

with sign restrictions read off the index partition. On the biactive set
I_00 the kinds differ:

    W   etaG >= 0, etaH free
    M   etaG >= 0, etaH free, etaG * etaH = 0 (two branches per index)
    S   etaG = 0,  etaH >= 0
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy.stats import qmc

from .linalg import LinearProgram, LpStatus, Sign, cone_nonzero, lp_solve
from .model import (
    DEFAULT_TOL_ACT,
    EvalRecord,
    IndexPartition,
    InfeasiblePointError,
    ProblemInstance,
    constraint_values_batch,
    evaluate,
    is_feasible,
    partition_indices,
)

MAX_BRANCH_BITS = 20
RESIDUAL_TOL = 1e-8
CONDITION_TOL = 1e-10
ALPHA_POSITIVE = 1e-8


class BranchLimit(RuntimeError):
    """Too many biactive indices to enumerate branches exhaustively."""


class StationarityKind(enum.Enum):
    W = "W"
    M = "M"
    S = "S"
    FJ_M = "FJ-M"
    FJ_S = "FJ-S"
    ENHANCED_M = "Enhanced-M"
    ENHANCED_S = "Enhanced-S"

    @property
    def base(self) -> str:
        return self.value[-1]

    @property
    def is_fj(self) -> bool:
        return self.value.startswith("FJ")

    @property
    def is_enhanced(self) -> bool:
        return self.value.startswith("Enhanced")

    @classmethod
    def parse(cls, text: "str | StationarityKind") -> "StationarityKind":
        if isinstance(text, cls):
            return text
        short = {"w": "W", "m": "M", "s": "S", "fj-m": "FJ-M", "fj-s": "FJ-S", "enh-m": "Enhanced-M", "enh-s": "Enhanced-S"}
        key = str(text).strip()
        return cls(short.get(key.lower(), key))


@dataclass(frozen=True)
class MultiplierVector:
    alpha: float
    lam: np.ndarray
    mu: np.ndarray
    eta_G: np.ndarray
    eta_H: np.ndarray
    branch: tuple[tuple[int, str], ...] = ()  # (biactive index, side zeroed: "G" or "H")

    @classmethod
    def zeros(cls, prob: ProblemInstance, alpha: float = 1.0) -> "MultiplierVector":
        return cls(alpha, np.zeros(prob.m), np.zeros(prob.p), np.zeros(prob.q), np.zeros(prob.q))

    def constraint_part(self) -> np.ndarray:
        return np.concatenate([self.lam, self.mu, self.eta_G, self.eta_H])

    def is_zero(self, tol: float = 0.0) -> bool:
        c = self.constraint_part()
        return bool(c.size == 0 or np.max(np.abs(c)) <= tol)

    def scaled(self, factor: float) -> "MultiplierVector":
        return MultiplierVector(
            self.alpha * factor,
            self.lam * factor,
            self.mu * factor,
            self.eta_G * factor,
            self.eta_H * factor,
            self.branch,
        )

    def to_dict(self) -> dict:
        return {
            "alpha": float(self.alpha),
            "lambda": [float(v) for v in self.lam],
            "mu": [float(v) for v in self.mu],
            "eta_G": [float(v) for v in self.eta_G],
            "eta_H": [float(v) for v in self.eta_H],
            "branch": {str(i + 1): side for i, side in self.branch},
        }


@dataclass(frozen=True)
class Witness:
    points: np.ndarray  # (K, n)
    radii: np.ndarray
    margins: np.ndarray
    mode: str

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "radii": [float(r) for r in self.radii],
            "points": [[float(v) for v in p] for p in self.points],
            "margins": [float(v) for v in self.margins],
        }


@dataclass(frozen=True)
class Certificate:
    kind: StationarityKind
    multipliers: MultiplierVector
    residual: float
    witness: Witness | None = None
    alpha_positive: bool | None = None
    all_zero: bool = False
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind.value,
            "residual": float(self.residual),
            "all_zero": self.all_zero,
            **self.multipliers.to_dict(),
        }
        if self.alpha_positive is not None:
            out["alpha_positive"] = self.alpha_positive
        if self.witness is not None:
            out["witness"] = self.witness.to_dict()
        if self.diagnostics:
            out["diagnostics"] = self.diagnostics
        return out


@dataclass(frozen=True)
class Unknown:
    """Multipliers exist but no witness sequence was found."""

    kind: StationarityKind
    reason: str
    candidates: tuple[MultiplierVector, ...] = ()

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "status": "Unknown", "reason": self.reason}


# --------------------------------------------------------------------------
# sign patterns


@dataclass(frozen=True)
class Pattern:
    lam: tuple[Sign, ...]
    mu: tuple[Sign, ...]
    eta_G: tuple[Sign, ...]
    eta_H: tuple[Sign, ...]

    def flat(self) -> list[Sign]:
        return [*self.lam, *self.mu, *self.eta_G, *self.eta_H]


def sign_pattern(prob: ProblemInstance, part: IndexPartition, base: str, branch: dict[int, str] | None = None) -> Pattern:
    """Signs for (lam, mu, etaG, etaH) under base kind W, M or S."""
    branch = branch or {}
    Z, P, F = Sign.ZERO, Sign.NONNEG, Sign.FREE
    lam = tuple(P if i in part.I_g else Z for i in range(prob.m))
    mu = (F,) * prob.p
    eta_G, eta_H = [], []
    for i in range(prob.q):
        if i in part.I_pm:
            gs, hs = Z, Z
        elif i in part.I_p0:
            gs, hs = P, Z
        elif i in part.I_0m:
            gs, hs = Z, P
        elif i in part.I_0p:
            gs, hs = Z, F
        elif base == "W":
            gs, hs = P, F
        elif base == "S":
            gs, hs = Z, P
        elif base == "M":
            side = branch.get(i)
            if side not in ("G", "H"):
                raise ValueError(f"branch must assign biactive index {i + 1}")
            gs, hs = (Z, F) if side == "G" else (P, Z)
        else:
            raise ValueError(f"unknown base kind {base!r}")
        eta_G.append(gs)
        eta_H.append(hs)
    return Pattern(lam, mu, tuple(eta_G), tuple(eta_H))


def branches(part: IndexPartition, base: str) -> Iterable[dict[int, str]]:
    """All biactive branch assignments for M kinds; one empty branch otherwise."""
    if base != "M":
        yield {}
        return
    idx = sorted(part.I_00)
    if len(idx) > MAX_BRANCH_BITS:
        raise BranchLimit(f"{len(idx)} biactive indices exceed the limit of {MAX_BRANCH_BITS}")
    for sides in itertools.product("GH", repeat=len(idx)):
        yield dict(zip(idx, sides))


def columns(ev: EvalRecord) -> np.ndarray:
    """Columns matching (lam, mu, etaG, etaH): grad g, grad h, grad G, -grad H."""
    n = ev.x.size
    parts = [ev.grad_g, ev.grad_h, ev.grad_G, -ev.grad_H]
    return np.vstack([p.reshape(-1, n) for p in parts]).T if any(p.size for p in parts) else np.zeros((n, 0))


def combination(ev: EvalRecord, mult: MultiplierVector) -> np.ndarray:
    cols = columns(ev)
    return cols @ mult.constraint_part() if cols.shape[1] else np.zeros(ev.x.size)


def stationarity_residual(ev: EvalRecord, mult: MultiplierVector) -> float:
    return float(np.linalg.norm(mult.alpha * ev.grad_f + combination(ev, mult)))


def _unflatten(prob: ProblemInstance, c: np.ndarray, alpha: float, branch: dict[int, str]) -> MultiplierVector:
    m, p, q = prob.m, prob.p, prob.q
    return MultiplierVector(
        float(alpha),
        c[:m].copy(),
        c[m : m + p].copy(),
        c[m + p : m + p + q].copy(),
        c[m + p + q :].copy(),
        tuple(sorted(branch.items())),
    )


# --------------------------------------------------------------------------
# systems


@dataclass
class MultiplierSystem:
    lp: LinearProgram
    kind: StationarityKind
    pattern: Pattern
    branch: dict[int, str]
    index: list[tuple[int, float]]  # LP variable -> (flat coefficient, sign)
    has_alpha: bool
    rhs_target: np.ndarray

    def unpack(self, prob: ProblemInstance, v: np.ndarray) -> MultiplierVector:
        c = np.zeros(len(self.pattern.flat()))
        offset = 1 if self.has_alpha else 0
        for j, (k, s) in enumerate(self.index):
            c[k] += s * v[offset + j]
        flat = self.pattern.flat()
        for k, sign in enumerate(flat):
            if sign is Sign.NONNEG and c[k] < 0:
                c[k] = 0.0
        alpha = float(v[0]) if self.has_alpha else 1.0
        if self.has_alpha:
            total = max(alpha, 0.0) + float(np.sum(np.abs(c)))
            if total > 0:
                alpha, c = max(alpha, 0.0) / total, c / total
        return _unflatten(prob, c, alpha, self.branch)


def build_multiplier_system(
    prob: ProblemInstance,
    x,
    kind,
    branch: dict[int, str] | None = None,
    *,
    part: IndexPartition | None = None,
    ev: EvalRecord | None = None,
    tol_act: float = DEFAULT_TOL_ACT,
) -> MultiplierSystem:
    """LP whose feasible points are the multipliers of ``kind`` on one branch.

    Non-FJ kinds fix alpha = 1 and move grad f to the right-hand side.
    FJ kinds carry alpha >= 0 as the first variable, split free
    coefficients, add the normalisation alpha + sum(parts) = 1, and
    maximise alpha.
    """
    kind = StationarityKind.parse(kind)
    ev = ev or evaluate(prob, x)
    part = part or partition_indices(prob, x, tol_act)
    branch = dict(branch or {})
    if kind.base != "M":
        branch = {}
    pattern = sign_pattern(prob, part, kind.base, branch)
    cols = columns(ev)
    flat = pattern.flat()
    n = prob.n
    index: list[tuple[int, float]] = []
    for k, sign in enumerate(flat):
        if sign is Sign.ZERO:
            continue
        index.append((k, 1.0))
        if sign is Sign.FREE and kind.is_fj:
            index.append((k, -1.0))

    if not kind.is_fj:
        A = np.column_stack([s * cols[:, k] for k, s in index]) if index else np.zeros((n, 0))
        lb = np.array([0.0 if flat[k] is Sign.NONNEG else -np.inf for k, _ in index])
        lp = LinearProgram(c=np.zeros(len(index)), A_eq=A, b_eq=-ev.grad_f, lb=lb)
        return MultiplierSystem(lp, kind, pattern, branch, index, False, -ev.grad_f)

    nv = 1 + len(index)
    A = np.zeros((n + 1, nv))
    A[:n, 0] = ev.grad_f
    for j, (k, s) in enumerate(index):
        A[:n, 1 + j] = s * cols[:, k]
    A[n, :] = 1.0
    b = np.zeros(n + 1)
    b[n] = 1.0
    obj = np.zeros(nv)
    obj[0] = 1.0
    lp = LinearProgram(c=obj, A_eq=A, b_eq=b)
    return MultiplierSystem(lp, kind, pattern, branch, index, True, np.zeros(n))


def _require_feasible(prob: ProblemInstance, x, tol_act: float) -> None:
    if not is_feasible(prob, x, tol_act):
        raise InfeasiblePointError("the point is not feasible within the activity tolerance")


def certify(
    prob: ProblemInstance,
    x,
    kind,
    *,
    tol_act: float = DEFAULT_TOL_ACT,
    seed: int = 0,
) -> Certificate | Unknown | None:
    """First branch whose multiplier system is feasible, as a certificate.

    FJ kinds search every branch for a solution with alpha > 1e-8 before
    settling for alpha = 0, and report the outcome in ``alpha_positive``.
    Enhanced kinds are forwarded to :func:`certify_enhanced`.
    """
    kind = StationarityKind.parse(kind)
    if kind.is_enhanced:
        return certify_enhanced(prob, x, kind, tol_act=tol_act, seed=seed)
    _require_feasible(prob, x, tol_act)
    ev = evaluate(prob, x)
    part = partition_indices(prob, x, tol_act)
    diag = {"I_00": sorted(i + 1 for i in part.I_00), "warnings": list(part.warnings)}
    all_branches = list(branches(part, kind.base))

    if not kind.is_fj:
        for br in all_branches:
            system = build_multiplier_system(prob, x, kind, br, part=part, ev=ev)
            out = lp_solve(system.lp)
            if not out.optimal:
                continue
            mult = system.unpack(prob, out.x)
            res = stationarity_residual(ev, mult)
            if res <= RESIDUAL_TOL:
                return Certificate(kind, mult, res, all_zero=mult.is_zero(), diagnostics=diag)
        return None

    zero_alpha: Certificate | None = None
    for br in all_branches:
        system = build_multiplier_system(prob, x, kind, br, part=part, ev=ev)
        out = lp_solve(system.lp)
        if out.optimal and out.x[0] > ALPHA_POSITIVE:
            mult = system.unpack(prob, out.x)
            res = stationarity_residual(ev, mult)
            if res <= RESIDUAL_TOL:
                return Certificate(kind, mult, res, alpha_positive=True, diagnostics=diag)
    for br in all_branches:
        if zero_alpha is not None:
            break
        pattern = sign_pattern(prob, part, kind.base, br)
        cols = columns(ev)
        if cols.shape[1] == 0:
            continue
        c = cone_nonzero(list(cols.T), pattern.flat())
        if c is not None:
            mult = _unflatten(prob, c, 0.0, br if kind.base == "M" else {})
            res = stationarity_residual(ev, mult)
            if res <= RESIDUAL_TOL:
                zero_alpha = Certificate(kind, mult, res, alpha_positive=False, diagnostics=diag)
    return zero_alpha


def verify_certificate(prob: ProblemInstance, x, cert: Certificate, kind=None, *, tol_act: float = DEFAULT_TOL_ACT) -> bool:
    """Recheck residual, signs and complementarity from scratch."""
    kind = StationarityKind.parse(kind) if kind is not None else cert.kind
    ev = evaluate(prob, x)
    part = partition_indices(prob, x, tol_act)
    mult = cert.multipliers
    t = CONDITION_TOL
    if stationarity_residual(ev, mult) > RESIDUAL_TOL:
        return False
    if kind.is_fj:
        total = abs(mult.alpha) + float(np.sum(np.abs(mult.constraint_part())))
        if mult.alpha < -t or total <= t:
            return False
    elif abs(mult.alpha - 1.0) > t:
        return False

    lam, eG, eH = mult.lam, mult.eta_G, mult.eta_H
    for i in range(prob.m):
        if i in part.I_g:
            if lam[i] < -t:
                return False
        elif abs(lam[i]) > t:
            return False
    for i in range(prob.q):
        if i in part.I_pm:
            ok = abs(eG[i]) <= t and abs(eH[i]) <= t
        elif i in part.I_p0:
            ok = eG[i] >= -t and abs(eH[i]) <= t
        elif i in part.I_0m:
            ok = abs(eG[i]) <= t and eH[i] >= -t
        elif i in part.I_0p:
            ok = abs(eG[i]) <= t
        elif kind.base == "W":
            ok = eG[i] >= -t
        elif kind.base == "M":
            ok = eG[i] >= -t and min(abs(eG[i]), abs(eH[i])) <= t
        else:
            ok = abs(eG[i]) <= t and eH[i] >= -t
        if not ok:
            return False

    if kind.is_enhanced and not mult.is_zero(t):
        if cert.witness is None:
            return False
        margins = witness_margins(prob, cert.witness.points, mult, "per-sign")
        if not np.all(margins >= WITNESS_MARGIN):
            return False
    return True


# --------------------------------------------------------------------------
# witnesses

WITNESS_LEVELS = 8
WITNESS_R0 = 0.5
WITNESS_SAMPLES = 2000
WITNESS_MARGIN = 1e-10
ZERO_TOL = 1e-9
MODES = ("per-sign", "aggregate")


def witness_margins(prob: ProblemInstance, X, mult: MultiplierVector, mode: str, zero_tol: float = ZERO_TOL) -> np.ndarray:
    """Margin of each row of ``X``: positive iff the strict conditions hold.

    per-sign: min over  lam_i g_i,  mu_j h_j,  -etaH_i H_i,  etaG_i G_i
    for the nonzero (positive, for lam and etaG) multipliers;
    aggregate: sum lam g + sum mu h + sum etaG G - sum etaH H.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    g, h, H, G = constraint_values_batch(prob, X)
    terms = []
    if mode == "aggregate":
        agg = g @ mult.lam + h @ mult.mu + G @ mult.eta_G - H @ mult.eta_H
        out = np.asarray(agg, dtype=float)
    else:
        for i in np.flatnonzero(mult.lam > zero_tol):
            terms.append(mult.lam[i] * g[:, i])
        for j in np.flatnonzero(np.abs(mult.mu) > zero_tol):
            terms.append(mult.mu[j] * h[:, j])
        for i in np.flatnonzero(np.abs(mult.eta_H) > zero_tol):
            terms.append(-mult.eta_H[i] * H[:, i])
        for i in np.flatnonzero(mult.eta_G > zero_tol):
            terms.append(mult.eta_G[i] * G[:, i])
        if not terms:
            return np.full(X.shape[0], np.inf)
        out = np.min(np.column_stack(terms), axis=1)
    return np.where(np.isnan(out), -np.inf, out)


def _pattern_points(n: int, radius: float) -> np.ndarray:
    pts = []
    for factor in (0.5, 0.25):
        for j in range(n):
            for s in (-1.0, 1.0):
                d = np.zeros(n)
                d[j] = s * factor * radius
                pts.append(d)
        if n <= 6:
            for signs in itertools.product((-1.0, 0.0, 1.0), repeat=n):
                s = np.array(signs)
                nnz = int(np.count_nonzero(s))
                if nnz >= 2:
                    pts.append(s * factor * radius / np.sqrt(nnz))
    return np.array(pts) if pts else np.zeros((0, n))


def _ball_points(n: int, count: int, seed: int) -> np.ndarray:
    """Quasi-random points in the unit ball (scrambled Sobol, radially squeezed cube)."""
    m = max(1, int(np.ceil(np.log2(max(count, 2)))))
    u = qmc.Sobol(d=n, scramble=True, seed=seed).random_base2(m)[:count]
    v = 2.0 * u - 1.0
    inf_norm = np.max(np.abs(v), axis=1)
    two_norm = np.linalg.norm(v, axis=1)
    scale = np.divide(inf_norm, two_norm, out=np.zeros_like(two_norm), where=two_norm > 0)
    return v * scale[:, None]


def witness_search(
    prob: ProblemInstance,
    x,
    mult: MultiplierVector,
    mode: str = "per-sign",
    *,
    levels: int = WITNESS_LEVELS,
    r0: float = WITNESS_R0,
    samples: int = WITNESS_SAMPLES,
    seed: int = 0,
    margin: float = WITNESS_MARGIN,
    zero_tol: float = ZERO_TOL,
) -> Witness | None:
    """One point per radius r_k = r0 2^-k (k = 1..levels) meeting the strict conditions.

    Coordinate-pattern points are tried first, then ``samples`` quasi-random
    points in the ball. Returns None as soon as one level has no such point.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if mult.is_zero(zero_tol):
        raise ValueError("zero multipliers: there is nothing to witness")
    x = np.asarray(x, dtype=float)
    n = x.size
    base = _ball_points(n, samples, seed)
    points, radii, margins = [], [], []
    for k in range(1, levels + 1):
        r = r0 * 2.0**-k
        cand = x + np.vstack([_pattern_points(n, r), r * base])
        marg = witness_margins(prob, cand, mult, mode, zero_tol)
        hits = np.flatnonzero(marg >= margin)
        if hits.size == 0:
            return None
        points.append(cand[hits[0]])
        radii.append(r)
        margins.append(marg[hits[0]])
    return Witness(np.array(points), np.array(radii), np.array(margins), mode)


def _vertex_candidates(prob: ProblemInstance, system: MultiplierSystem, first: np.ndarray) -> list[MultiplierVector]:
    """The feasible point found plus vertices maximising +-each coefficient."""
    out = [system.unpack(prob, first)]
    lp = system.lp
    for j in range(lp.num_vars):
        for direction in (1.0, -1.0):
            if direction < 0 and lp.lb[j] == 0.0:
                continue
            obj = np.zeros(lp.num_vars)
            obj[j] = direction
            res = lp_solve(LinearProgram(c=obj, A_eq=lp.A_eq, b_eq=lp.b_eq, lb=lp.lb, ub=lp.ub))
            if res.status is LpStatus.OPTIMAL:
                cand = system.unpack(prob, res.x)
                if all(np.max(np.abs(cand.constraint_part() - o.constraint_part()), initial=0.0) > 1e-9 for o in out):
                    out.append(cand)
    return out


def certify_enhanced(
    prob: ProblemInstance,
    x,
    kind="Enhanced-M",
    *,
    tol_act: float = DEFAULT_TOL_ACT,
    seed: int = 0,
) -> Certificate | Unknown | None:
    """Base certificate plus a per-sign witness sequence.

    Returns the certificate when a witness is found (or the multipliers are
    all zero, which makes the sequence condition vacuous), Unknown when
    multipliers exist but no witness was found, and None when no
    multipliers exist at all.
    """
    kind = StationarityKind.parse(kind)
    if not kind.is_enhanced:
        raise ValueError("certify_enhanced takes Enhanced-M or Enhanced-S")
    _require_feasible(prob, x, tol_act)
    ev = evaluate(prob, x)
    part = partition_indices(prob, x, tol_act)
    base = StationarityKind(kind.base)
    diag = {"I_00": sorted(i + 1 for i in part.I_00), "warnings": list(part.warnings)}
    tried: list[MultiplierVector] = []
    for br in branches(part, kind.base):
        system = build_multiplier_system(prob, x, base, br, part=part, ev=ev)
        out = lp_solve(system.lp)
        if not out.optimal:
            continue
        for mult in _vertex_candidates(prob, system, out.x):
            res = stationarity_residual(ev, mult)
            if res > RESIDUAL_TOL:
                continue
            if mult.is_zero(CONDITION_TOL):
                return Certificate(kind, mult, res, all_zero=True, diagnostics=diag)
            tried.append(mult)
            wit = witness_search(prob, x, mult, "per-sign", seed=seed)
            if wit is not None:
                return Certificate(kind, mult, res, witness=wit, diagnostics=diag)
    if tried:
        return Unknown(kind, f"{len(tried)} multiplier candidates, no witness sequence found", tuple(tried))
    return None


# --------------------------------------------------------------------------


def decompose_normal(prob: ProblemInstance, x, v, *, tol_act: float = DEFAULT_TOL_ACT) -> MultiplierVector | None:
    """Write v = sum lam grad g + sum mu grad h + sum (etaG grad G - etaH grad H) with M signs."""
    _require_feasible(prob, x, tol_act)
    ev = evaluate(prob, x)
    part = partition_indices(prob, x, tol_act)
    v = np.asarray(v, dtype=float).reshape(prob.n)
    cols = columns(ev)
    for br in branches(part, "M"):
        flat = sign_pattern(prob, part, "M", br).flat()
        keep = [k for k, s in enumerate(flat) if s is not Sign.ZERO]
        A = cols[:, keep] if keep else np.zeros((prob.n, 0))
        lb = np.array([0.0 if flat[k] is Sign.NONNEG else -np.inf for k in keep])
        out = lp_solve(LinearProgram(c=np.zeros(len(keep)), A_eq=A, b_eq=v, lb=lb))
        if not out.optimal:
            continue
        c = np.zeros(len(flat))
        c[keep] = out.x
        mult = _unflatten(prob, c, 0.0, br)
        if np.linalg.norm(combination(ev, mult) - v) <= RESIDUAL_TOL:
            return mult
    return None
