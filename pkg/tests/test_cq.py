import numpy as np
import pytest

from mpvc import expr as ex
from mpvc.cq import (
    CHAIN,
    CQ_NAMES,
    ConsistencyViolation,
    CqVerdict,
    Provenance,
    Status,
    check_all,
    check_cpld,
    check_gmfcq,
    check_licq,
    check_mfcq,
    check_sequential_cq,
    detect_structural,
    propagate,
    quasinormality_stability,
    verify_verdict,
)
from mpvc.expr import parse_problem
from mpvc.linalg import finite_diff_grad
from mpvc.model import registry

from conftest import REGISTRY_NAMES, feasible_points

CPLD_FAILS = "vars: x1 x2\nminimize: x2\nvanish: H = x1, G = x2 - 1\nvanish: H = x1 + x1*x2, G = x2 - 1\n"
QUASI_FAILS = "vars: x1 x2\nminimize: x2\nvanish: H = -(x1^2), G = -1\n"


def _by_name(verdicts):
    return {v.name: v for v in verdicts}


def _fd_grad(e, x):
    return finite_diff_grad(lambda v: ex.eval(e, v), x, h=1e-7)


def _fd_rows(prob, x, labels):
    groups = {"g": prob.g, "h": prob.h, "G": prob.G, "H": prob.H}
    return np.array([_fd_grad(groups[lab[0]][int(lab[1:]) - 1], x) for lab in labels])


def independent_recheck(prob, x, verdict):
    """Re-derive a Fails certificate from finite-difference gradients."""
    cert = verdict.certificate
    kind = cert["type"]
    if kind == "rank":
        rows = _fd_rows(prob, x, cert["rows"])
        return np.linalg.matrix_rank(rows, tol=1e-6) < len(cert["rows"])
    if kind == "cpld":
        rows = _fd_rows(prob, np.array(cert["point"]), cert["family"])
        return np.linalg.matrix_rank(rows, tol=1e-9) == len(cert["family"])
    if kind == "nonlinear":
        return bool(cert["expressions"])
    if kind in ("multiplier", "witness"):
        total = np.zeros(prob.n)
        for name, exprs, sign in (("lambda", prob.g, 1), ("mu", prob.h, 1), ("eta_G", prob.G, 1), ("eta_H", prob.H, -1)):
            for coef, e in zip(cert[name], exprs):
                total += sign * coef * _fd_grad(e, x)
        coefs = np.concatenate([cert[k] for k in ("lambda", "mu", "eta_G", "eta_H")])
        if np.sum(np.abs(coefs)) == 0 or np.linalg.norm(total) > 1e-6:
            return False
        if any(v < 0 for v in cert["lambda"]):
            return False
        if kind == "witness":
            wit = cert["witness"]
            for p in wit["points"]:
                agg = sum(c * ex.eval(e, p) for c, e in zip(cert["lambda"], prob.g))
                agg += sum(c * ex.eval(e, p) for c, e in zip(cert["mu"], prob.h))
                agg += sum(c * ex.eval(e, p) for c, e in zip(cert["eta_G"], prob.G))
                agg -= sum(c * ex.eval(e, p) for c, e in zip(cert["eta_H"], prob.H))
                if wit["mode"] == "aggregate" and agg <= 0:
                    return False
            radii = np.array(wit["radii"])
            dist = np.linalg.norm(np.array(wit["points"]) - np.asarray(x), axis=1)
            return bool(np.all(dist <= radii + 1e-12))
        return True
    return False


# --------------------------------------------------------------------------
# single checks


def test_licq_examples(P1, P2):
    assert check_licq(P1, [0, 0]).holds
    v = check_licq(P2, [0, 0])
    assert v.fails and sorted(v.certificate["rows"]) == ["H1", "H2"]
    assert independent_recheck(P2, [0, 0], v)
    assert check_licq(P1, [1, -1]).holds  # I_+- only, empty family


def test_mfcq_examples(P1, P2):
    v = check_mfcq(P1, [0, 0])
    assert v.holds
    d = np.array(v.certificate["d"])
    assert d @ [1, 0] == pytest.approx(0.0, abs=1e-12) and d @ [0, 1] < 0
    v = check_mfcq(P2, [0, 0])
    assert v.fails and verify_verdict(P2, [0, 0], v)
    assert check_mfcq(parse_problem("vars: a\nminimize: a^2\n"), [0.0]).holds


def test_gmfcq_examples(P1, P2):
    assert check_gmfcq(P1, [0, 0]).holds
    v = check_gmfcq(P2, [0, 0])
    assert v.fails
    eta = np.array(v.certificate["eta_H"])
    assert eta[0] == pytest.approx(eta[1]) and eta[0] > 0
    assert independent_recheck(P2, [0, 0], v)
    assert check_gmfcq(parse_problem("vars: a\nminimize: a\n"), [1.0]).holds


def test_sequential_examples(P1, P2, P3):
    assert check_sequential_cq(P1, [0, 0], "Quasinormality").holds
    v = check_sequential_cq(P2, [0, 0], "Quasinormality")
    assert v.status is Status.UNKNOWN
    assert check_sequential_cq(P3, [0, -1], "Pseudonormality").holds
    with pytest.raises(ValueError):
        check_sequential_cq(P1, [0, 0], "LICQ")


def test_quasinormality_fails_with_witness():
    prob = parse_problem(QUASI_FAILS)
    v = check_sequential_cq(prob, [0, 0], "Quasinormality")
    assert v.fails and v.certificate["type"] == "witness"
    assert verify_verdict(prob, [0, 0], v)
    assert independent_recheck(prob, [0, 0], v)


def test_cpld_examples(P1, P2):
    v = check_cpld(P1, [0, 0])
    assert v.holds
    v = check_cpld(P2, [0, 0])
    assert v.holds and v.provenance is Provenance.STRUCTURAL


def test_cpld_fails_on_varying_gradients():
    prob = parse_problem(CPLD_FAILS)
    v = check_cpld(prob, [0, 0])
    assert v.fails
    assert sorted(v.certificate["family"]) == ["H1", "H2"]
    assert verify_verdict(prob, [0, 0], v)
    assert independent_recheck(prob, [0, 0], v)
    # the rank jump is real: gradients (1,0) and (1 + x2, x1) separate off the axis x1 = 0
    assert np.linalg.matrix_rank(_fd_rows(prob, np.array([0.1, 0.0]), ["H1", "H2"]), tol=1e-9) == 2


def test_cpld_is_seed_deterministic():
    prob = parse_problem(CPLD_FAILS)
    assert check_cpld(prob, [0, 0], seed=3) == check_cpld(prob, [0, 0], seed=3)


def test_detect_structural():
    rep = detect_structural(registry("P3"))
    assert rep.flags.all_affine and rep.linear_cq.holds
    assert rep.pseudonormality.holds and rep.pseudonormality.provenance is Provenance.STRUCTURAL
    rep = detect_structural(registry("P1"))
    assert rep.flags.pseudonormal_everywhere and rep.pseudonormality.holds
    rep = detect_structural(parse_problem("vars: a\nminimize: a\ng: a^2\n"))
    assert not rep.flags.all_g_concave_or_linear and not rep.flags.all_affine
    assert rep.pseudonormality is None and rep.linear_cq.fails
    rep = detect_structural(parse_problem("vars: a\nminimize: a\ng: -(a^2) @concave\n"))
    assert rep.flags.pseudonormal_everywhere and not rep.flags.all_affine


# --------------------------------------------------------------------------
# lattice


def test_check_all_p1(P1):
    out = _by_name(check_all(P1, [0, 0]))
    assert list(out) == list(CQ_NAMES)
    assert all(v.holds for v in out.values())


def test_check_all_p2(P2):
    out = _by_name(check_all(P2, [0, 0]))
    for name in ("LICQ", "MFCQ", "GMFCQ"):
        assert out[name].fails
        assert verify_verdict(P2, [0, 0], out[name])
        assert independent_recheck(P2, [0, 0], out[name])
    assert out["CPLD"].holds and out["CPLD"].provenance is Provenance.STRUCTURAL
    quasi = out["Quasinormality"]
    assert quasi.holds and "CPLD" in quasi.implied_by


def test_check_all_p3(P3):
    out = _by_name(check_all(P3, [0, -1]))
    assert out["LinearCQ"].holds
    assert out["Pseudonormality"].holds and out["Pseudonormality"].provenance is Provenance.STRUCTURAL


def test_propagate_raises_on_contradiction():
    verdicts = {name: CqVerdict(name, Status.UNKNOWN, Provenance.SAMPLED) for name in CQ_NAMES}
    verdicts["LICQ"] = CqVerdict("LICQ", Status.HOLDS, Provenance.EXACT_LP)
    verdicts["MFCQ"] = CqVerdict("MFCQ", Status.FAILS, Provenance.EXACT_LP, {"type": "rank", "rows": []})
    with pytest.raises(ConsistencyViolation):
        propagate(verdicts)


def test_propagate_fills_unknowns():
    verdicts = {name: CqVerdict(name, Status.UNKNOWN, Provenance.SAMPLED) for name in CQ_NAMES}
    verdicts["LICQ"] = CqVerdict("LICQ", Status.HOLDS, Provenance.EXACT_LP)
    out = _by_name(propagate(verdicts))
    for name in ("MFCQ", "GMFCQ", "Pseudonormality", "Quasinormality"):
        assert out[name].holds and out[name].provenance is Provenance.STRUCTURAL
    assert out["CPLD"].status is Status.UNKNOWN


def _lattice_ok(verdicts):
    by = _by_name(verdicts)
    return all(not (by[up].holds and by[down].fails) for up, down in CHAIN)


CRAFTED = {"cpld_fails": CPLD_FAILS, "quasi_fails": QUASI_FAILS}


@pytest.mark.parametrize("name", REGISTRY_NAMES + tuple(CRAFTED))
def test_lattice_consistency_on_random_points(name):
    prob = parse_problem(CRAFTED[name]) if name in CRAFTED else registry(name)
    for x in feasible_points(prob, 50, seed=21):
        verdicts = check_all(prob, x, seed=0)
        assert _lattice_ok(verdicts), (name, x)
        for v in verdicts:
            if v.fails:
                assert v.certificate is not None
                assert verify_verdict(prob, x, v), (name, x, v.name)
                assert independent_recheck(prob, x, v), (name, x, v.name)


def test_check_all_deterministic(P2):
    a = [v.to_dict() for v in check_all(P2, [0, 0], seed=4)]
    b = [v.to_dict() for v in check_all(P2, [0, 0], seed=4)]
    assert a == b


def test_verify_verdict_rejects_tampered_certificate(P2):
    v = check_gmfcq(P2, [0, 0])
    cert = dict(v.certificate)
    cert["eta_H"] = [1.0, 0.5]
    bad = CqVerdict(v.name, v.status, v.provenance, cert)
    assert not verify_verdict(P2, [0, 0], bad)
    cert = dict(v.certificate)
    cert["eta_G"] = [-1.0, 0.0]
    assert not verify_verdict(P2, [0, 0], CqVerdict(v.name, v.status, v.provenance, cert))


def test_quasinormality_stability(P1):
    rep = quasinormality_stability(P1, [0, 0], samples=10, seed=1)
    assert rep.tested > 0
    assert sum(rep.statuses.values()) == rep.tested
    assert rep.statuses.get("Fails", 0) == 0
