"""Constraint qualifications for vanishing-constraint programs.

Verdicts are three-valued. Every ``Fails`` carries a certificate that
:func:`verify_verdict` can recheck from scratch; ``Unknown`` means a finite
search ran out. :func:`check_all` also propagates ``Holds`` down the
implication chain

    LICQ -> MFCQ -> GMFCQ -> Pseudonormality -> Quasinormality,
    CPLD -> Quasinormality

and treats any (upstream Holds, downstream Fails) pair as a bug.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from . import stationarity as st
from .expr import CurvatureTag
from .linalg import IterationLimit, LinearProgram, Sign, cone_nonzero, cone_rays, lp_solve, null_vector, rank_with_tol
from .model import DEFAULT_TOL_ACT, EvalRecord, IndexPartition, ProblemInstance, evaluate, feasible_mask, partition_indices

CQ_NAMES = ("LICQ", "MFCQ", "GMFCQ", "Pseudonormality", "Quasinormality", "CPLD", "LinearCQ")
CHAIN = (
    ("LICQ", "MFCQ"),
    ("MFCQ", "GMFCQ"),
    ("GMFCQ", "Pseudonormality"),
    ("Pseudonormality", "Quasinormality"),
    ("CPLD", "Quasinormality"),
)
MFCQ_SLACK = 1e-7
CERT_RESIDUAL = 1e-9
RAY_CAP = 64
CPLD_MAX_MEMBERS = 12


class ConsistencyViolation(AssertionError):
    """Two verdicts contradict a proven implication; always a bug."""


class Status(enum.Enum):
    HOLDS = "Holds"
    FAILS = "Fails"
    UNKNOWN = "Unknown"


class Provenance(enum.Enum):
    STRUCTURAL = "Structural"
    EXACT_LP = "ExactLP"
    SAMPLED = "Sampled"


@dataclass(frozen=True)
class CqVerdict:
    name: str
    status: Status
    provenance: Provenance
    certificate: dict | None = None
    notes: str = ""
    implied_by: tuple[str, ...] = ()

    @property
    def holds(self) -> bool:
        return self.status is Status.HOLDS

    @property
    def fails(self) -> bool:
        return self.status is Status.FAILS

    def to_dict(self) -> dict:
        out = {"name": self.name, "status": self.status.value, "provenance": self.provenance.value}
        if self.implied_by:
            out["implied_by"] = list(self.implied_by)
        if self.certificate is not None:
            out["certificate"] = self.certificate
        if self.notes:
            out["notes"] = self.notes
        return out


# --------------------------------------------------------------------------
# gradient families


def _label(kind: str, i: int) -> str:
    return f"{kind}{i + 1}"


def _parse_label(label: str) -> tuple[str, int]:
    return label[0], int(label[1:]) - 1


def _gradient(ev: EvalRecord, label: str) -> np.ndarray:
    kind, i = _parse_label(label)
    return {"g": ev.grad_g, "h": ev.grad_h, "G": ev.grad_G, "H": ev.grad_H}[kind][i]


def _family_matrix(ev: EvalRecord, labels) -> np.ndarray:
    return np.array([_gradient(ev, lab) for lab in labels]).reshape(len(labels), ev.x.size)


def licq_family(prob: ProblemInstance, part: IndexPartition) -> list[str]:
    fam = [_label("g", i) for i in sorted(part.I_g)]
    fam += [_label("h", j) for j in range(prob.p)]
    fam += [_label("G", i) for i in sorted(part.I_p0 | part.I_00)]
    fam += [_label("H", i) for i in sorted(part.I_zero)]
    return fam


def _rank_certificate(ev: EvalRecord, labels: list[str]) -> dict:
    M = _family_matrix(ev, labels)
    dep = null_vector(M.T)
    return {"type": "rank", "rows": labels, "dependence": [float(v) for v in dep]}


def _multiplier_certificate(prob, c: np.ndarray, base: str, branch: dict[int, str]) -> dict:
    mult = st._unflatten(prob, c, 0.0, branch)
    out = {"type": "multiplier", "pattern": base}
    out.update(mult.to_dict())
    del out["alpha"]
    return out


def _mult_from_certificate(prob: ProblemInstance, cert: dict) -> st.MultiplierVector:
    branch = tuple(sorted((int(k) - 1, v) for k, v in cert.get("branch", {}).items()))
    return st.MultiplierVector(
        0.0,
        np.array(cert["lambda"], float).reshape(prob.m),
        np.array(cert["mu"], float).reshape(prob.p),
        np.array(cert["eta_G"], float).reshape(prob.q),
        np.array(cert["eta_H"], float).reshape(prob.q),
        branch,
    )


def _context(prob, x, tol_act):
    return evaluate(prob, x), partition_indices(prob, x, tol_act)


# --------------------------------------------------------------------------
# decidable checks


def check_licq(prob: ProblemInstance, x, *, tol_act: float = DEFAULT_TOL_ACT) -> CqVerdict:
    ev, part = _context(prob, x, tol_act)
    fam = licq_family(prob, part)
    if not fam:
        return CqVerdict("LICQ", Status.HOLDS, Provenance.EXACT_LP, notes="no active constraints")
    if rank_with_tol(_family_matrix(ev, fam)) == len(fam):
        return CqVerdict("LICQ", Status.HOLDS, Provenance.EXACT_LP, {"type": "rank", "rows": fam})
    return CqVerdict("LICQ", Status.FAILS, Provenance.EXACT_LP, _rank_certificate(ev, fam))


def check_mfcq(prob: ProblemInstance, x, *, tol_act: float = DEFAULT_TOL_ACT) -> CqVerdict:
    """Rank test on the equality-like gradients, then an LP for a strictly feasible direction."""
    ev, part = _context(prob, x, tol_act)
    n = prob.n
    eq_idx = sorted(part.I_0p | part.I_00)
    eq_labels = [_label("h", j) for j in range(prob.p)] + [_label("H", i) for i in eq_idx]
    if eq_labels and rank_with_tol(_family_matrix(ev, eq_labels)) < len(eq_labels):
        return CqVerdict("MFCQ", Status.FAILS, Provenance.EXACT_LP, _rank_certificate(ev, eq_labels))

    strict = [ev.grad_g[i] for i in sorted(part.I_g)]
    strict += [-ev.grad_H[i] for i in sorted(part.I_0m)]
    strict += [ev.grad_G[i] for i in sorted(part.I_p0 | part.I_00)]
    eq_rows = _family_matrix(ev, eq_labels) if eq_labels else np.zeros((0, n))
    A_eq = np.hstack([eq_rows, np.zeros((eq_rows.shape[0], 1))])
    A_le = np.array([np.append(r, 1.0) for r in strict]).reshape(len(strict), n + 1)
    c = np.zeros(n + 1)
    c[-1] = 1.0
    lp = LinearProgram(
        c=c,
        A_eq=A_eq,
        b_eq=np.zeros(A_eq.shape[0]),
        A_le=A_le,
        b_le=np.zeros(len(strict)),
        lb=np.append(-np.ones(n), 0.0),
        ub=np.ones(n + 1),
    )
    try:
        out = lp_solve(lp)
    except IterationLimit as err:
        return CqVerdict("MFCQ", Status.UNKNOWN, Provenance.EXACT_LP, notes=str(err))
    if out.optimal and out.x[-1] > MFCQ_SLACK:
        d = out.x[:n]
        return CqVerdict("MFCQ", Status.HOLDS, Provenance.EXACT_LP, {"type": "direction", "d": [float(v) for v in d], "slack": float(out.x[-1])})
    # no strictly feasible direction: the dual cone (W signs) has a nonzero element
    pattern = st.sign_pattern(prob, part, "W")
    cols = st.columns(ev)
    cvec = cone_nonzero(list(cols.T), pattern.flat()) if cols.shape[1] else None
    if cvec is None:
        return CqVerdict("MFCQ", Status.UNKNOWN, Provenance.EXACT_LP, notes="LP slack is zero but no dual multiplier was recovered")
    return CqVerdict("MFCQ", Status.FAILS, Provenance.EXACT_LP, _multiplier_certificate(prob, cvec, "W", {}))


def _nonzero_m_multiplier(prob, ev, part) -> tuple[np.ndarray, dict] | None:
    cols = st.columns(ev)
    if cols.shape[1] == 0:
        return None
    for br in st.branches(part, "M"):
        c = cone_nonzero(list(cols.T), st.sign_pattern(prob, part, "M", br).flat())
        if c is not None:
            return c, br
    return None


def check_gmfcq(prob: ProblemInstance, x, *, tol_act: float = DEFAULT_TOL_ACT) -> CqVerdict:
    ev, part = _context(prob, x, tol_act)
    try:
        found = _nonzero_m_multiplier(prob, ev, part)
    except st.BranchLimit as err:
        return CqVerdict("GMFCQ", Status.UNKNOWN, Provenance.EXACT_LP, notes=str(err))
    if found is None:
        return CqVerdict("GMFCQ", Status.HOLDS, Provenance.EXACT_LP, notes="only the zero multiplier on every branch")
    c, br = found
    return CqVerdict("GMFCQ", Status.FAILS, Provenance.EXACT_LP, _multiplier_certificate(prob, c, "M", br))


# --------------------------------------------------------------------------
# sequential conditions


def check_sequential_cq(
    prob: ProblemInstance,
    x,
    name: str,
    *,
    seed: int = 0,
    tol_act: float = DEFAULT_TOL_ACT,
    ray_cap: int = RAY_CAP,
) -> CqVerdict:
    """Pseudonormality (aggregate witness) or quasinormality (per-sign witness)."""
    if name not in ("Pseudonormality", "Quasinormality"):
        raise ValueError("name must be Pseudonormality or Quasinormality")
    mode = "aggregate" if name == "Pseudonormality" else "per-sign"
    ev, part = _context(prob, x, tol_act)
    cols = st.columns(ev)
    try:
        all_branches = list(st.branches(part, "M"))
    except st.BranchLimit as err:
        return CqVerdict(name, Status.UNKNOWN, Provenance.EXACT_LP, notes=str(err))
    if cols.shape[1] == 0 or _nonzero_m_multiplier(prob, ev, part) is None:
        return CqVerdict(name, Status.HOLDS, Provenance.EXACT_LP, notes="the multiplier set is {0}")

    tried, capped = 0, False
    for br in all_branches:
        rays, hit_cap = cone_rays(list(cols.T), st.sign_pattern(prob, part, "M", br).flat(), cap=ray_cap)
        capped |= hit_cap
        for c in rays:
            tried += 1
            mult = st._unflatten(prob, c, 0.0, br)
            wit = st.witness_search(prob, x, mult, mode, seed=seed)
            if wit is not None:
                cert = _multiplier_certificate(prob, c, "M", br)
                cert["type"] = "witness"
                cert["witness"] = wit.to_dict()
                return CqVerdict(name, Status.FAILS, Provenance.SAMPLED, cert)
    note = f"{tried} nonzero multiplier rays, no {mode} witness sequence found"
    if capped:
        note += f"; ray enumeration capped at {ray_cap} per branch"
    return CqVerdict(name, Status.UNKNOWN, Provenance.SAMPLED, notes=note)


# --------------------------------------------------------------------------
# CPLD


def _cpld_members(prob: ProblemInstance, part: IndexPartition) -> list[tuple[str, Sign]]:
    members = [(_label("g", i), Sign.NONNEG) for i in sorted(part.I_g)]
    members += [(_label("h", j), Sign.FREE) for j in range(prob.p)]
    members += [(_label("H", i), Sign.FREE) for i in sorted(part.I_zero)]
    members += [(_label("G", i), Sign.FREE) for i in sorted(part.I_p0 | part.I_00)]
    return members


def _is_constant_gradient(prob: ProblemInstance, label: str) -> bool:
    kind, i = _parse_label(label)
    tags = {"g": prob.g_tags, "h": prob.h_tags, "G": prob.G_tags, "H": prob.H_tags}[kind]
    return tags[i] is CurvatureTag.LINEAR


def _ball_samples(x: np.ndarray, radius: float, count: int, rng: np.random.Generator) -> np.ndarray:
    d = rng.standard_normal((count, x.size))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = radius * rng.random(count) ** (1.0 / x.size)
    return x + d * r[:, None]


def check_cpld(
    prob: ProblemInstance,
    x,
    radius: float = 1e-2,
    samples: int = 200,
    *,
    seed: int = 0,
    tol_act: float = DEFAULT_TOL_ACT,
) -> CqVerdict:
    """Every sign-feasible dependent family must stay dependent near x.

    Only minimal dependent families are tested: a superset of a family that
    stays dependent stays dependent too. A family holding both H_l and G_l
    for a biactive l cannot use both in one dependence, so it is covered by
    its subfamilies.
    """
    if radius <= 0 or samples < 1:
        raise ValueError("radius must be positive and samples at least 1")
    x = np.asarray(x, dtype=float)
    ev, part = _context(prob, x, tol_act)
    members = _cpld_members(prob, part)
    if len(members) > CPLD_MAX_MEMBERS:
        return CqVerdict("CPLD", Status.UNKNOWN, Provenance.SAMPLED, notes=f"{len(members)} active gradients exceed {CPLD_MAX_MEMBERS}")
    rng = np.random.default_rng(seed)
    pts = _ball_samples(x, radius, samples, rng)
    sample_evals: list[EvalRecord] | None = None

    dependent: list[frozenset[int]] = []
    sampled = False
    for size in range(1, len(members) + 1):
        for combo in itertools.combinations(range(len(members)), size):
            fam = frozenset(combo)
            if any(d <= fam for d in dependent):
                continue
            labels = [members[k][0] for k in combo]
            if any(f"G{lab[1:]}" in labels for lab in labels if lab[0] == "H" and int(lab[1:]) - 1 in part.I_00):
                continue
            cols = [_gradient(ev, lab) for lab in labels]
            if cone_nonzero(cols, [members[k][1] for k in combo]) is None:
                continue
            dependent.append(fam)
            if all(_is_constant_gradient(prob, lab) for lab in labels):
                continue
            sampled = True
            if sample_evals is None:
                sample_evals = [evaluate(prob, w) for w in pts]
            for w, ev_w in zip(pts, sample_evals):
                if rank_with_tol(_family_matrix(ev_w, labels)) == len(labels):
                    cert = {"type": "cpld", "family": labels, "point": [float(v) for v in w], "rank": len(labels)}
                    return CqVerdict("CPLD", Status.FAILS, Provenance.SAMPLED, cert)
    if not dependent:
        return CqVerdict("CPLD", Status.HOLDS, Provenance.EXACT_LP, notes="no family admits a nonzero dependence")
    families = [[members[k][0] for k in sorted(f)] for f in dependent]
    prov = Provenance.SAMPLED if sampled else Provenance.STRUCTURAL
    return CqVerdict("CPLD", Status.HOLDS, prov, {"type": "families", "dependent": families, "radius": radius, "samples": samples})


# --------------------------------------------------------------------------
# structure


@dataclass(frozen=True)
class StructuralFlags:
    all_h_linear: bool
    all_G_linear: bool
    all_H_linear: bool
    all_g_concave_or_linear: bool
    all_affine: bool

    @property
    def pseudonormal_everywhere(self) -> bool:
        return self.all_h_linear and self.all_G_linear and self.all_H_linear and self.all_g_concave_or_linear


@dataclass(frozen=True)
class StructuralReport:
    flags: StructuralFlags
    pseudonormality: CqVerdict | None
    quasinormality: CqVerdict | None
    linear_cq: CqVerdict


def detect_structural(prob: ProblemInstance) -> StructuralReport:
    lin = CurvatureTag.LINEAR
    flags = StructuralFlags(
        all_h_linear=all(t is lin for t in prob.h_tags),
        all_G_linear=all(t is lin for t in prob.G_tags),
        all_H_linear=all(t is lin for t in prob.H_tags),
        all_g_concave_or_linear=all(t in (lin, CurvatureTag.DECLARED_CONCAVE) for t in prob.g_tags),
        all_affine=all(t is lin for t in (*prob.g_tags, *prob.h_tags, *prob.G_tags, *prob.H_tags)),
    )
    pseudo = quasi = None
    if flags.pseudonormal_everywhere:
        note = "h, G, H linear and g linear or declared concave"
        pseudo = CqVerdict("Pseudonormality", Status.HOLDS, Provenance.STRUCTURAL, notes=note)
        quasi = CqVerdict("Quasinormality", Status.HOLDS, Provenance.STRUCTURAL, notes=note, implied_by=("Pseudonormality",))
    if flags.all_affine:
        linear = CqVerdict("LinearCQ", Status.HOLDS, Provenance.STRUCTURAL, notes="g, h, G, H all affine")
    else:
        bad = [
            _label(kind, i)
            for kind, tags in (("g", prob.g_tags), ("h", prob.h_tags), ("H", prob.H_tags), ("G", prob.G_tags))
            for i, t in enumerate(tags)
            if t is not lin
        ]
        linear = CqVerdict("LinearCQ", Status.FAILS, Provenance.STRUCTURAL, {"type": "nonlinear", "expressions": bad})
    return StructuralReport(flags, pseudo, quasi, linear)


# --------------------------------------------------------------------------
# lattice


def check_all(
    prob: ProblemInstance,
    x,
    *,
    seed: int = 0,
    tol_act: float = DEFAULT_TOL_ACT,
    cpld_radius: float = 1e-2,
    cpld_samples: int = 200,
) -> list[CqVerdict]:
    """All seven verdicts in a fixed order, after lattice propagation."""
    structural = detect_structural(prob)
    direct_pseudo = check_sequential_cq(prob, x, "Pseudonormality", seed=seed, tol_act=tol_act)
    if structural.pseudonormality is not None:
        if direct_pseudo.fails:
            raise ConsistencyViolation("structural pseudonormality contradicted by a witness")
        pseudo = structural.pseudonormality
    else:
        pseudo = direct_pseudo
    verdicts = {
        "LICQ": check_licq(prob, x, tol_act=tol_act),
        "MFCQ": check_mfcq(prob, x, tol_act=tol_act),
        "GMFCQ": check_gmfcq(prob, x, tol_act=tol_act),
        "Pseudonormality": pseudo,
        "Quasinormality": check_sequential_cq(prob, x, "Quasinormality", seed=seed, tol_act=tol_act),
        "CPLD": check_cpld(prob, x, cpld_radius, cpld_samples, seed=seed, tol_act=tol_act),
        "LinearCQ": structural.linear_cq,
    }
    return propagate(verdicts)


def propagate(verdicts: dict[str, CqVerdict]) -> list[CqVerdict]:
    out = dict(verdicts)
    for up, down in CHAIN:
        u, d = out[up], out[down]
        if not u.holds:
            continue
        if d.fails:
            raise ConsistencyViolation(f"{up} Holds but {down} Fails")
        if d.status is Status.UNKNOWN:
            note = f"implied by {up}; direct check: {d.notes}" if d.notes else f"implied by {up}"
            out[down] = CqVerdict(down, Status.HOLDS, Provenance.STRUCTURAL, notes=note, implied_by=(up,))
        elif d.implied_by and up not in d.implied_by:
            out[down] = replace(d, implied_by=d.implied_by + (up,))
    return [out[name] for name in CQ_NAMES]


# --------------------------------------------------------------------------
# independent re-verification


def verify_verdict(prob: ProblemInstance, x, verdict: CqVerdict, *, tol_act: float = DEFAULT_TOL_ACT) -> bool:
    """Recheck a Fails certificate from the raw problem data.

    Holds and Unknown verdicts carry no claim to recheck and return True.
    """
    if not verdict.fails:
        return True
    cert = verdict.certificate or {}
    kind = cert.get("type")
    if kind == "nonlinear":
        from .expr import classify_curvature

        exprs = {"g": prob.g, "h": prob.h, "H": prob.H, "G": prob.G}
        labels = cert["expressions"]
        return bool(labels) and all(
            classify_curvature(exprs[lab[0]][int(lab[1:]) - 1]) is not CurvatureTag.LINEAR for lab in labels
        )
    ev, part = _context(prob, x, tol_act)
    if kind == "rank":
        rows = cert["rows"]
        return rank_with_tol(_family_matrix(ev, rows)) < len(rows)
    if kind in ("multiplier", "witness"):
        mult = _mult_from_certificate(prob, cert)
        base = cert["pattern"]
        try:
            pattern = st.sign_pattern(prob, part, base, dict(mult.branch))
        except ValueError:
            return False
        c = mult.constraint_part()
        if np.sum(np.abs(c)) <= 0.0:
            return False
        for val, sign in zip(c, pattern.flat()):
            if sign is Sign.ZERO and val != 0.0:
                return False
            if sign is Sign.NONNEG and val < 0.0:
                return False
        if np.max(np.abs(st.combination(ev, mult)), initial=0.0) > CERT_RESIDUAL:
            return False
        if kind == "witness":
            wit = cert["witness"]
            margins = st.witness_margins(prob, np.array(wit["points"]), mult, wit["mode"])
            return bool(np.all(margins >= st.WITNESS_MARGIN))
        return True
    if kind == "cpld":
        labels = cert["family"]
        sign_of = dict(_cpld_members(prob, part))
        if any(lab not in sign_of for lab in labels):
            return False
        if cone_nonzero([_gradient(ev, lab) for lab in labels], [sign_of[lab] for lab in labels]) is None:
            return False
        ev_w = evaluate(prob, np.array(cert["point"]))
        return rank_with_tol(_family_matrix(ev_w, labels)) == len(labels)
    return False


# --------------------------------------------------------------------------
# neighbourhood diagnostic


@dataclass(frozen=True)
class StabilityReport:
    tested: int
    statuses: dict[str, int] = field(default_factory=dict)


def quasinormality_stability(
    prob: ProblemInstance,
    x,
    radius: float = 0.05,
    samples: int = 20,
    *,
    seed: int = 0,
    tol_act: float = DEFAULT_TOL_ACT,
) -> StabilityReport:
    """Re-run the quasinormality check at sampled feasible points near x.

    Candidates keep a random subset of x's coordinates, so feasible sets
    of lower dimension through x are also reached.
    """
    x = np.asarray(x, dtype=float)
    rng = np.random.default_rng(seed)
    cand = _ball_samples(x, radius, 8 * samples, rng)
    keep = rng.random(cand.shape) < 0.5
    cand = np.where(keep, x, cand)
    cand = cand[feasible_mask(prob, cand, tol_act)][:samples]
    counts: dict[str, int] = {}
    for w in cand:
        v = check_sequential_cq(prob, w, "Quasinormality", seed=seed, tol_act=tol_act)
        counts[v.status.value] = counts.get(v.status.value, 0) + 1
    return StabilityReport(len(cand), counts)
