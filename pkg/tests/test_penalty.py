import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hs

from mpvc.expr import parse_problem
from mpvc.geometry import in_omega
from mpvc.linalg import finite_diff_grad
from mpvc.model import evaluate, registry
from mpvc.penalty import (
    InnerStatus,
    LiftedPoint,
    PenaltyConfig,
    lift,
    limit_fj_check,
    penalty_value_grad,
    recover_multipliers,
    solve_penalty,
    verify_enhanced_on_trace,
)
from mpvc.stationarity import MultiplierVector, certify

RUNS = {
    "P1": ((0.0, 0.0), (0.5, 0.5)),
    "P3": ((0.0, -1.0), (0.3, -0.5)),
}


@pytest.fixture(scope="module")
def traces():
    out = {}
    for name, (anchor, x0) in RUNS.items():
        prob = registry(name)
        out[name] = (prob, solve_penalty(prob, PenaltyConfig(anchor=anchor), x0))
    return out


def test_lift_examples(P1):
    p = lift(P1, [0, 0])
    assert list(p.flat()) == [0, 0, 0, 0]
    p = lift(P1, [1, -1])
    assert (p.y[0], p.z[0]) == (1.0, -1.0)
    p = lift(parse_problem("vars: a\nminimize: a\n"), [2.0])
    assert p.y.size == 0 and p.z.size == 0
    back = LiftedPoint.from_flat(lift(registry("P2"), [0.5, 0.0]).flat(), 2, 2)
    np.testing.assert_array_equal(back.y, [0.5, -0.5])
    np.testing.assert_array_equal(back.z, [-1.0, -1.0])


def test_penalty_value_examples(P1):
    cfg = PenaltyConfig(anchor=(0, 0))
    value, _ = penalty_value_grad(P1, cfg, 2.0, LiftedPoint(np.array([1.0, 0.0]), np.array([1.0]), np.array([0.0])))
    # f = 1, all penalty terms vanish, proximal term 0.5 * (|x - x*|^2 + |y - y*|^2) = 0.5 * (1 + 1)
    assert value == 2.0
    value, _ = penalty_value_grad(P1, cfg, 2.0, LiftedPoint(np.array([1.0, 0.0]), np.array([0.0]), np.array([0.0])))
    # y left at the anchor: k/2 (y - H)^2 = 1 plus 0.5 from x
    assert value == 2.5
    for k in (1.0, 10.0, 1e6):
        assert penalty_value_grad(P1, cfg, k, lift(P1, [0, 0]))[0] == 0.0
    with pytest.raises(ValueError):
        penalty_value_grad(P1, cfg, 0.0, lift(P1, [0, 0]))


@pytest.mark.parametrize("name", ["P1", "P2", "P3", "P4"])
def test_penalty_gradient_against_finite_differences(name):
    prob = registry(name)
    rng = np.random.default_rng(2)
    cfg = PenaltyConfig(anchor=tuple(rng.uniform(-1, 1, prob.n)))
    size = prob.n + 2 * prob.q
    for v in rng.uniform(-2, 2, size=(20, size)):
        for k in (1.0, 37.0):
            p = LiftedPoint.from_flat(v, prob.n, prob.q)
            _, g = penalty_value_grad(prob, cfg, k, p)
            fd = finite_diff_grad(lambda w: penalty_value_grad(prob, cfg, k, LiftedPoint.from_flat(w, prob.n, prob.q))[0], v, h=1e-6)
            np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-5 * max(1.0, np.max(np.abs(g))))


def test_penalty_gradient_with_inequalities():
    prob = parse_problem("vars: a b\nminimize: a*b\ng: a^2 - 1\nh: a + b\nvanish: H = b, G = a^2 - b\n")
    cfg = PenaltyConfig(anchor=(0.2, -0.1))
    rng = np.random.default_rng(3)
    for v in rng.uniform(-2, 2, size=(20, 4)):
        p = LiftedPoint.from_flat(v, 2, 1)
        _, g = penalty_value_grad(prob, cfg, 5.0, p)
        fd = finite_diff_grad(lambda w: penalty_value_grad(prob, cfg, 5.0, LiftedPoint.from_flat(w, 2, 1))[0], v, h=1e-6)
        np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-5 * max(1.0, np.max(np.abs(g))))


# --------------------------------------------------------------------------
# multiplier recovery


def test_recover_multipliers_examples(P1):
    cfg = PenaltyConfig(anchor=(0, 0))
    mult, delta = recover_multipliers(P1, cfg, 10.0, lift(P1, [0, 0]))
    assert delta == 1.0 and mult.alpha == 1.0 and mult.is_zero()
    # k (y - H) = 3 with k = 10
    p = LiftedPoint(np.array([0.0, 0.0]), np.array([0.3]), np.array([0.0]))
    mult, delta = recover_multipliers(P1, cfg, 10.0, p)
    assert delta == pytest.approx(math.sqrt(10.0), rel=1e-15)
    assert mult.alpha == pytest.approx(1 / math.sqrt(10.0), rel=1e-15)
    assert mult.eta_H[0] == pytest.approx(3 / math.sqrt(10.0), rel=1e-15)


def test_recovered_eta_G_is_negated(P1):
    p = LiftedPoint(np.array([0.0, 0.0]), np.array([0.0]), np.array([0.2]))
    mult, _ = recover_multipliers(P1, PenaltyConfig(anchor=(0, 0)), 10.0, p)
    assert mult.eta_G[0] < 0


@settings(max_examples=200, deadline=None)
@given(hs.lists(hs.floats(-5, 5), min_size=4, max_size=4), hs.floats(1.0, 1e8))
def test_recovered_norm_is_one(v, k):
    prob = registry("P1")
    mult, _ = recover_multipliers(prob, PenaltyConfig(anchor=(0, 0)), k, LiftedPoint.from_flat(np.array(v), 2, 1))
    norm = np.linalg.norm(np.concatenate([[mult.alpha], mult.constraint_part()]))
    assert abs(norm - 1.0) <= 1e-10


# --------------------------------------------------------------------------
# solver runs


@pytest.mark.parametrize("name", list(RUNS))
def test_converges_to_anchor(traces, name):
    prob, trace = traces[name]
    assert len(trace.steps) == 8
    assert np.linalg.norm(trace.final.point.x - np.array(RUNS[name][0])) <= 1e-3


@pytest.mark.parametrize("name", list(RUNS))
def test_values_never_exceed_anchor_value(traces, name):
    prob, trace = traces[name]
    f_star = evaluate(prob, RUNS[name][0]).f
    assert all(s.value <= f_star + 1e-8 for s in trace.steps)


@pytest.mark.parametrize("name", list(RUNS))
def test_trace_invariants(traces, name):
    prob, trace = traces[name]
    a = lift(prob, RUNS[name][0]).flat()
    for s in trace.steps:
        assert abs(s.multiplier_norm() - 1.0) <= 1e-10
        assert np.linalg.norm(s.point.flat() - a) <= 1.0 + 1e-12
        assert all(in_omega(y, z, 0.0) for y, z in zip(s.point.y, s.point.z))
        assert s.delta >= 1.0


@pytest.mark.parametrize("name, kind", [("P1", "S"), ("P3", "M")])
def test_limit_multipliers_match_exact_certificates(traces, name, kind):
    prob, trace = traces[name]
    anchor = RUNS[name][0]
    limit = trace.limit
    assert limit.alpha > 1e-6
    check = limit_fj_check(prob, anchor, limit)
    assert check["ok"] and check["residual"] <= 1e-4
    exact = certify(prob, anchor, kind).multipliers
    scaled = limit.scaled(1.0 / limit.alpha)
    np.testing.assert_allclose(scaled.constraint_part(), exact.constraint_part(), atol=1e-2)


def test_trace_serialisation(traces):
    _, trace = traces["P1"]
    d = trace.to_dict()
    assert len(d["steps"]) == 8 and d["limit_multipliers"]["eta_H"][0] > 0
    lines = trace.to_csv().strip().splitlines()
    assert lines[0].startswith("k,F,dist_x,alpha")
    assert len(lines) == 9


def test_config_validation():
    with pytest.raises(ValueError):
        PenaltyConfig(anchor=(0, 0), radius=0)
    with pytest.raises(ValueError):
        PenaltyConfig(anchor=(0, 0), schedule=(10, 5))
    with pytest.raises(ValueError):
        PenaltyConfig(anchor=(0, 0), inner="newton")
    with pytest.raises(ValueError):
        PenaltyConfig(anchor=(0, 0), armijo_shrink=1.5)


def test_start_outside_ball_rejected(P1):
    with pytest.raises(ValueError):
        solve_penalty(P1, PenaltyConfig(anchor=(0, 0), radius=0.1), (0.5, 0.5))


def test_infeasible_anchor_still_produces_trace(P1):
    trace = solve_penalty(P1, PenaltyConfig(anchor=(1.0, 1.0), schedule=(10.0, 100.0)), (1.0, 1.0))
    assert len(trace.steps) == 2
    assert all(abs(s.multiplier_norm() - 1.0) <= 1e-10 for s in trace.steps)


def test_projected_inner_solver_keeps_iterates_admissible(P1):
    cfg = PenaltyConfig(anchor=(0, 0), inner="projected", schedule=(10.0, 100.0), max_inner=200)
    trace = solve_penalty(P1, cfg, (0.5, 0.5))
    a = lift(P1, (0, 0)).flat()
    for s in trace.steps:
        assert np.linalg.norm(s.point.flat() - a) <= 1.0 + 1e-12
        assert all(in_omega(y, z, 0.0) for y, z in zip(s.point.y, s.point.z))
        assert s.status in tuple(InnerStatus)
    assert trace.steps[-1].value <= 1e-8


# --------------------------------------------------------------------------
# enhanced conditions on the trace


def test_enhanced_report_on_p1(traces):
    prob, trace = traces["P1"]
    rep = verify_enhanced_on_trace(prob, (0, 0), trace.limit, trace)
    assert not rep.vacuous
    assert "eta_H1" in rep.conditions and "descent" in rep.conditions
    assert len(rep.rows) == 4
    # the iterates approach from x1 < 0, which is where -eta_H H > 0
    assert rep.holds_at("eta_H1") == [k for k, _ in rep.rows]


def test_enhanced_report_vacuous(P1, traces):
    _, trace = traces["P1"]
    rep = verify_enhanced_on_trace(P1, (0, 0), MultiplierVector.zeros(P1), trace)
    assert rep.vacuous and rep.all_hold and rep.conditions == ()


def test_enhanced_report_infeasible_anchor_flags_descent(P1):
    trace = solve_penalty(P1, PenaltyConfig(anchor=(1.0, 1.0), schedule=(10.0, 100.0, 1000.0)), (1.0, 1.0))
    rep = verify_enhanced_on_trace(P1, (1.0, 1.0), trace.limit, trace)
    assert not rep.vacuous
    assert set(rep.to_dict()) == {"vacuous", "conditions", "rows", "all_hold"}


def test_enhanced_report_needs_steps(P1):
    from mpvc.penalty import PenaltyTrace

    with pytest.raises(ValueError):
        verify_enhanced_on_trace(P1, (0, 0), MultiplierVector.zeros(P1), PenaltyTrace(np.zeros(2), 0.0))
