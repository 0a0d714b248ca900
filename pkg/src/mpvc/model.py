"""Problem instances, pointwise evaluation and the active-index partition."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from .expr import CurvatureTag, Expr

log = logging.getLogger(__name__)

DEFAULT_TOL_ACT = 1e-6


class InfeasiblePointError(ValueError):
    """Raised where an operation requires a feasible point."""


@dataclass(frozen=True)
class ProblemInstance:
    """min f(x) s.t. g(x) <= 0, h(x) = 0, H_i(x) >= 0, G_i(x) H_i(x) <= 0.

    ``vanish`` holds the pairs as ``(H_i, G_i)``.
    """

    var_names: tuple[str, ...]
    objective: Expr
    g: tuple[Expr, ...] = ()
    h: tuple[Expr, ...] = ()
    vanish: tuple[tuple[Expr, Expr], ...] = ()
    g_concave: tuple[bool, ...] = ()
    name: str = field(default="", compare=False)

    def __post_init__(self):
        if not self.g_concave:
            object.__setattr__(self, "g_concave", (False,) * len(self.g))
        if len(self.g_concave) != len(self.g):
            raise ValueError("one concavity flag per inequality is required")
        n = self.n
        for e in self.expressions():
            if e.max_var() >= n:
                raise ValueError("expression references an undeclared variable")
        tag = ex.classify_curvature
        object.__setattr__(self, "f_tag", tag(self.objective))
        object.__setattr__(self, "g_tags", tuple(tag(e, c) for e, c in zip(self.g, self.g_concave)))
        object.__setattr__(self, "h_tags", tuple(tag(e) for e in self.h))
        object.__setattr__(self, "H_tags", tuple(tag(H) for H, _ in self.vanish))
        object.__setattr__(self, "G_tags", tuple(tag(G) for _, G in self.vanish))

    @property
    def n(self) -> int:
        return len(self.var_names)

    @property
    def m(self) -> int:
        return len(self.g)

    @property
    def p(self) -> int:
        return len(self.h)

    @property
    def q(self) -> int:
        return len(self.vanish)

    @property
    def H(self) -> tuple[Expr, ...]:
        return tuple(pair[0] for pair in self.vanish)

    @property
    def G(self) -> tuple[Expr, ...]:
        return tuple(pair[1] for pair in self.vanish)

    def expressions(self) -> list[Expr]:
        return [self.objective, *self.g, *self.h, *self.H, *self.G]

    def text(self) -> str:
        return ex.format_problem(self)

    def digest(self) -> str:
        return hashlib.sha256(self.text().encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class EvalRecord:
    x: np.ndarray
    f: float
    grad_f: np.ndarray
    g: np.ndarray
    grad_g: np.ndarray  # (m, n)
    h: np.ndarray
    grad_h: np.ndarray  # (p, n)
    H: np.ndarray
    grad_H: np.ndarray  # (q, n)
    G: np.ndarray
    grad_G: np.ndarray  # (q, n)


@dataclass(frozen=True)
class IndexPartition:
    """Active sets at a point; indices are 0-based positions."""

    I_g: frozenset[int]
    I_p0: frozenset[int]
    I_pm: frozenset[int]
    I_00: frozenset[int]
    I_0p: frozenset[int]
    I_0m: frozenset[int]
    q: int
    tol_act: float = DEFAULT_TOL_ACT
    warnings: tuple[str, ...] = ()

    @property
    def I_plus(self) -> frozenset[int]:
        return self.I_p0 | self.I_pm

    @property
    def I_zero(self) -> frozenset[int]:
        return self.I_00 | self.I_0p | self.I_0m

    @property
    def ambiguous(self) -> bool:
        return bool(self.warnings)

    def as_dict(self) -> dict[str, list[int]]:
        """1-based index lists, as printed in reports."""
        sets = {
            "I_g": self.I_g,
            "I_+0": self.I_p0,
            "I_+-": self.I_pm,
            "I_00": self.I_00,
            "I_0+": self.I_0p,
            "I_0-": self.I_0m,
        }
        return {k: sorted(i + 1 for i in v) for k, v in sets.items()}


def _point(prob: ProblemInstance, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (prob.n,):
        raise ValueError(f"expected a point of dimension {prob.n}, got shape {x.shape}")
    return x


def _values_grads(exprs, x, n) -> tuple[np.ndarray, np.ndarray]:
    vals = np.empty(len(exprs))
    grads = np.empty((len(exprs), n))
    for i, e in enumerate(exprs):
        vals[i], grads[i] = ex.value_and_grad(e, x)
    return vals, grads


def evaluate(prob: ProblemInstance, x) -> EvalRecord:
    x = _point(prob, x)
    f, df = ex.value_and_grad(prob.objective, x)
    g, dg = _values_grads(prob.g, x, prob.n)
    h, dh = _values_grads(prob.h, x, prob.n)
    H, dH = _values_grads(prob.H, x, prob.n)
    G, dG = _values_grads(prob.G, x, prob.n)
    return EvalRecord(x.copy(), f, df, g, dg, h, dh, H, dH, G, dG)


def constraint_values(prob: ProblemInstance, x) -> tuple[np.ndarray, ...]:
    """(g, h, H, G) values only; cheaper than :func:`evaluate`."""
    x = _point(prob, x)
    return tuple(np.array([ex.eval(e, x) for e in group]) for group in (prob.g, prob.h, prob.H, prob.G))


def constraint_values_batch(prob: ProblemInstance, X) -> tuple[np.ndarray, ...]:
    """(g, h, H, G) at every row of ``X``, each of shape ``(N, count)``; NaN where undefined."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = []
    for group in (prob.g, prob.h, prob.H, prob.G):
        cols = [ex.eval_batch(e, X) for e in group]
        out.append(np.stack(cols, axis=1) if cols else np.zeros((X.shape[0], 0)))
    return tuple(out)


def feasible_mask(prob: ProblemInstance, X, tol: float) -> np.ndarray:
    g, h, H, G = constraint_values_batch(prob, X)
    with np.errstate(invalid="ignore"):
        ok = np.all(g <= tol, axis=1) & np.all(np.abs(h) <= tol, axis=1)
        ok &= np.all(H >= -tol, axis=1) & np.all(G * H <= tol, axis=1)
    return ok


def is_feasible(prob: ProblemInstance, x, tol: float = 1e-9) -> bool:
    if tol <= 0:
        raise ValueError("tol must be positive")
    g, h, H, G = constraint_values(prob, x)
    return bool(np.all(g <= tol) and np.all(np.abs(h) <= tol) and np.all(H >= -tol) and np.all(G * H <= tol))


def partition_indices(prob: ProblemInstance, x, tol_act: float = DEFAULT_TOL_ACT) -> IndexPartition:
    """Classify the active sets; values within ``tol_act`` of zero count as zero.

    Raises :class:`InfeasiblePointError` when a pair cannot be placed, which
    only happens at points that are infeasible beyond ``tol_act``.
    """
    g, _, H, G = constraint_values(prob, x)
    warnings: list[str] = []

    def sign(v: float) -> int:
        return 0 if abs(v) <= tol_act else (1 if v > 0 else -1)

    for label, vals in (("H", H), ("G", G)):
        for i, v in enumerate(vals):
            if tol_act < abs(v) < 2 * tol_act:
                warnings.append(f"AmbiguousActivity: {label}_{i + 1} = {v:.3e} is within twice the activity tolerance")
    for i, v in enumerate(g):
        if tol_act < v < 2 * tol_act:
            warnings.append(f"AmbiguousActivity: g_{i + 1} = {v:.3e} is within twice the activity tolerance")
        if v > tol_act:
            raise InfeasiblePointError(f"g_{i + 1} = {v:.3e} > 0")

    sets: dict[str, set[int]] = {k: set() for k in ("p0", "pm", "00", "0p", "0m")}
    for i, (hv, gv) in enumerate(zip(H, G)):
        sh, sg = sign(hv), sign(gv)
        if sh < 0:
            raise InfeasiblePointError(f"H_{i + 1} = {hv:.3e} < 0")
        if sh > 0:
            if sg > 0:
                if gv * hv > tol_act:
                    raise InfeasiblePointError(f"G_{i + 1} H_{i + 1} = {gv * hv:.3e} > 0")
                warnings.append(f"AmbiguousActivity: pair {i + 1} has a small positive product, classified as I_+0")
                sg = 0
            sets["p0" if sg == 0 else "pm"].add(i)
        else:
            sets[{0: "00", 1: "0p", -1: "0m"}[sg]].add(i)

    if warnings:
        log.info("partition at %s: %s", list(np.asarray(x, float)), "; ".join(warnings))
    return IndexPartition(
        I_g=frozenset(i for i, v in enumerate(g) if abs(v) <= tol_act),
        I_p0=frozenset(sets["p0"]),
        I_pm=frozenset(sets["pm"]),
        I_00=frozenset(sets["00"]),
        I_0p=frozenset(sets["0p"]),
        I_0m=frozenset(sets["0m"]),
        q=prob.q,
        tol_act=tol_act,
        warnings=tuple(warnings),
    )


# --------------------------------------------------------------------------
# registry

REGISTRY_TEXT = {
    "P1": """\
vars: x1 x2
minimize: x1 + x2^2
vanish: H = x1, G = x2
""",
    "P2": """\
vars: x1 x2
minimize: x1^2 + x2^2
vanish: H = x1, G = -1
vanish: H = -x1, G = -1
""",
    "P3": """\
vars: x1 x2
minimize: x1 + x2
g: -x1 - 1
g: -x2 - 1
vanish: H = x1, G = x2 - 1
""",
    "P4": """\
vars: x1 x2
minimize: x2 - x1
vanish: H = x1, G = x2
""",
}

# Known local minimizers, used by cross-checks and examples.
REGISTRY_MINIMIZERS = {
    "P1": (0.0, 0.0),
    "P2": (0.0, 0.0),
    "P3": (0.0, -1.0),
}


def registry(name: str) -> ProblemInstance:
    if name not in REGISTRY_TEXT:
        raise KeyError(f"unknown registry problem {name!r}; known: {sorted(REGISTRY_TEXT)}")
    prob = ex.parse_problem(REGISTRY_TEXT[name])
    object.__setattr__(prob, "name", name)
    return prob


def all_linear(prob: ProblemInstance) -> bool:
    tags = (*prob.g_tags, *prob.h_tags, *prob.H_tags, *prob.G_tags)
    return all(t is CurvatureTag.LINEAR for t in tags)
