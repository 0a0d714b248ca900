import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hs
from scipy.optimize import linprog

from mpvc import _backend
from mpvc.linalg import (
    IterationLimit,
    LinearProgram,
    LpStatus,
    PreconditionError,
    Sign,
    caratheodory_reduce,
    cone_nonzero,
    cone_rays,
    finite_diff_grad,
    lp_solve,
    rank_with_tol,
)

P, F, Z = Sign.NONNEG, Sign.FREE, Sign.ZERO


# --------------------------------------------------------------------------
# rank


def test_rank_examples():
    assert rank_with_tol([[0, 1], [1, 0]]) == 2
    assert rank_with_tol([[1, 0], [-1, 0]]) == 1
    assert rank_with_tol(np.zeros((3, 2))) == 0
    assert rank_with_tol(np.zeros((0, 2))) == 0
    with pytest.raises(ValueError):
        rank_with_tol([[1.0]], tol=0)


def test_rank_threshold_scales_with_largest_row():
    assert rank_with_tol([[1e6, 0], [0, 1e-2]]) == 2
    assert rank_with_tol([[1e6, 0], [0, 1e-4]]) == 1
    assert rank_with_tol([[1.0, 0], [0, 1e-8]]) == 2
    assert rank_with_tol([[1.0, 0], [0, 1e-10]]) == 1


@settings(max_examples=200, deadline=None)
@given(hs.integers(1, 5), hs.integers(1, 5), hs.integers(0, 5), hs.randoms(use_true_random=False))
def test_rank_matches_svd_and_is_permutation_invariant(r, c, k, rnd):
    rng = np.random.default_rng(rnd.randint(0, 2**31))
    k = min(k, r, c)
    M = rng.integers(-3, 4, size=(r, k)) @ rng.integers(-3, 4, size=(k, c)) if k else np.zeros((r, c))
    M = M.astype(float)
    expected = np.linalg.matrix_rank(M)
    assert rank_with_tol(M) == expected
    assert rank_with_tol(M[rng.permutation(r)]) == expected


# --------------------------------------------------------------------------
# LP


def test_lp_examples():
    out = lp_solve(LinearProgram(c=[1.0], A_le=[[1.0]], b_le=[3.0]))
    assert out.status is LpStatus.OPTIMAL and out.value == 3.0
    out = lp_solve(LinearProgram(c=[0.0], A_le=[[1.0]], b_le=[0.0], lb=[1.0]))
    assert out.status is LpStatus.INFEASIBLE
    out = lp_solve(LinearProgram(c=[1.0], lb=[-np.inf]))
    assert out.status is LpStatus.UNBOUNDED


def test_lp_iteration_limit():
    lp = LinearProgram(c=[1.0, 1.0], A_le=[[1.0, 0.0], [0.0, 1.0]], b_le=[1.0, 1.0])
    with pytest.raises(IterationLimit):
        lp_solve(lp, max_iter=1)


def test_lp_rejects_non_finite_data():
    with pytest.raises(ValueError):
        LinearProgram(c=[np.nan])


def test_lp_degenerate_cycling_example():
    # Beale's example cycles under the textbook largest-coefficient rule
    c = np.array([0.75, -150.0, 0.02, -6.0])
    A = np.array([[0.25, -60.0, -0.04, 9.0], [0.5, -90.0, -0.02, 3.0], [0.0, 0.0, 1.0, 0.0]])
    b = np.array([0.0, 0.0, 1.0])
    out = lp_solve(LinearProgram(c=c, A_le=A, b_le=b))
    assert out.optimal
    assert out.value == pytest.approx(0.05, abs=1e-12)


def _random_lp(rng):
    n = int(rng.integers(1, 5))
    me, ml = int(rng.integers(0, 3)), int(rng.integers(0, 4))
    c = rng.integers(-3, 4, n).astype(float)
    A_eq = rng.integers(-2, 3, (me, n)).astype(float)
    b_eq = rng.integers(-3, 4, me).astype(float)
    A_le = rng.integers(-2, 3, (ml, n)).astype(float)
    b_le = rng.integers(-1, 5, ml).astype(float)
    kinds = rng.integers(0, 4, n)
    lb = np.where(kinds == 1, -np.inf, np.where(kinds == 2, -2.0, 0.0))
    ub = np.where(kinds == 3, 3.0, np.inf)
    return LinearProgram(c=c, A_eq=A_eq, b_eq=b_eq, A_le=A_le, b_le=b_le, lb=lb, ub=ub)


def _scipy_status(lp):
    def run(c):
        return linprog(
            c,
            A_ub=lp.A_le if lp.A_le.shape[0] else None,
            b_ub=lp.b_le if lp.A_le.shape[0] else None,
            A_eq=lp.A_eq if lp.A_eq.shape[0] else None,
            b_eq=lp.b_eq if lp.A_eq.shape[0] else None,
            bounds=list(zip(np.where(np.isinf(lp.lb), None, lp.lb), np.where(np.isinf(lp.ub), None, lp.ub))),
            method="highs",
        )

    ref = run(-lp.c)
    if ref.status == 2 and run(np.zeros_like(lp.c)).status == 0:
        # HiGHS presolve can report an unbounded model as infeasible
        return ref, LpStatus.UNBOUNDED
    return ref, {0: LpStatus.OPTIMAL, 2: LpStatus.INFEASIBLE, 3: LpStatus.UNBOUNDED}[ref.status]


@settings(max_examples=300, deadline=None)
@given(hs.integers(0, 2**31 - 1))
def test_lp_agrees_with_scipy(seed):
    lp = _random_lp(np.random.default_rng(seed))
    ref, expected = _scipy_status(lp)
    out = lp_solve(lp)
    assert out.status is expected
    if out.optimal:
        assert out.value == pytest.approx(-ref.fun, abs=1e-8)
        assert lp.violation(out.x) <= 1e-9
        again = lp_solve(lp)
        assert np.array_equal(again.x, out.x)


# --------------------------------------------------------------------------
# cones


def test_cone_examples():
    assert cone_nonzero([[0, 1], [1, 0]], [P, P]) is None
    np.testing.assert_allclose(cone_nonzero([[1, 0], [-1, 0]], [P, P]), [0.5, 0.5])
    np.testing.assert_allclose(cone_nonzero([[0, 0]], [P]), [1.0])


def test_cone_free_columns_need_rank_deficiency():
    # free variables alone: nonzero only in the null space
    assert cone_nonzero([[1, 0], [0, 1]], [F, F]) is None
    c = cone_nonzero([[1, 0], [2, 0]], [F, F])
    assert c is not None
    assert np.abs(c[0] + 2 * c[1]) < 1e-12
    assert cone_nonzero([[1, 0]], [Z]) is None
    with pytest.raises(ValueError):
        cone_nonzero([], [])


def _cone_oracle(cols, signs):
    """Independent check: the cone is nonzero iff some coordinate can be pushed to +-1."""
    A = np.column_stack(cols)
    n, K = A.shape
    bounds = [(0, None) if s is P else (None, None) if s is F else (0, 0) for s in signs]
    for k in range(K):
        for sgn in (1.0, -1.0):
            if signs[k] is Z or (signs[k] is P and sgn < 0):
                continue
            row = np.zeros(K)
            row[k] = sgn
            res = linprog(np.zeros(K), A_eq=np.vstack([A, row]), b_eq=np.append(np.zeros(n), 1.0), bounds=bounds, method="highs")
            if res.status == 0:
                return True
    return False


@settings(max_examples=300, deadline=None)
@given(hs.integers(0, 2**31 - 1))
def test_cone_nonzero_against_oracle(seed):
    rng = np.random.default_rng(seed)
    n, K = int(rng.integers(1, 4)), int(rng.integers(1, 5))
    cols = [rng.integers(-2, 3, n).astype(float) for _ in range(K)]
    signs = [(P, F, Z)[i] for i in rng.integers(0, 3, K)]
    c = cone_nonzero(cols, signs)
    assert (c is not None) == _cone_oracle(cols, signs)
    if c is not None:
        assert np.max(np.abs(np.column_stack(cols) @ c)) <= 1e-9
        assert np.sum(np.abs(c)) == pytest.approx(1.0)
        for v, s in zip(c, signs):
            assert s is not Z or v == 0.0
            assert s is not P or v >= 0.0


def test_cone_rays_cap():
    cols = [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]
    rays, capped = cone_rays(cols, [P] * 4)
    assert len(rays) == 2 and not capped
    rays, capped = cone_rays(cols, [P] * 4, cap=1)
    assert len(rays) == 1 and capped


# --------------------------------------------------------------------------
# Caratheodory


def test_caratheodory_examples():
    out = caratheodory_reduce([1, 0], [], [([1, 0], 0.5), ([2, 0], 0.25)])
    assert len(out.kept) == 1
    assert np.all(out.coeffs > 0)
    assert out.residual <= 1e-8
    out = caratheodory_reduce([1, 1], [[1, 0]], [([0, 1], 1.0)])
    assert out.kept == (0,) and out.coeffs[0] == pytest.approx(1.0)
    out = caratheodory_reduce([0, 0], [], [])
    assert out.kept == () and out.coeffs.size == 0


def test_caratheodory_preconditions():
    with pytest.raises(PreconditionError):
        caratheodory_reduce([1, 0], [], [([0, 1], 1.0)])
    with pytest.raises(PreconditionError):
        caratheodory_reduce([1, 0], [[1, 0], [2, 0]], [])
    with pytest.raises(PreconditionError):
        caratheodory_reduce([0, 0], [], [([1, 0], 0.0)])


@settings(max_examples=150, deadline=None)
@given(hs.integers(0, 2**31 - 1))
def test_caratheodory_properties(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    nb = int(rng.integers(0, n + 1))
    base = list(np.linalg.qr(rng.standard_normal((n, n)))[0][:, :nb].T)
    extras = [(rng.integers(-2, 3, n).astype(float), float(rng.choice([-1, 1]) * rng.uniform(0.5, 2))) for _ in range(rng.integers(0, 5))]
    extras = [(v, a) for v, a in extras if np.any(v)]
    beta = rng.standard_normal(nb)
    x = sum((b * v for b, v in zip(beta, base)), np.zeros(n)) + sum((a * v for v, a in extras), np.zeros(n))
    out = caratheodory_reduce(x, base, extras)
    fam = [*base, *(extras[i][0] for i in out.kept)]
    if fam:
        assert rank_with_tol(np.array(fam)) == len(fam)
    for i, c in zip(out.kept, out.coeffs):
        assert np.sign(c) == np.sign(extras[i][1])
    assert out.residual <= 1e-8


def test_finite_diff_examples():
    assert finite_diff_grad(lambda v: v[0] ** 2, [1.0])[0] == pytest.approx(2.0, abs=1e-6)
    np.testing.assert_array_equal(finite_diff_grad(lambda v: 4.0, [1.0, 2.0]), [0.0, 0.0])
    np.testing.assert_allclose(finite_diff_grad(lambda v: v[0] * v[1], [3.0, 5.0]), [5.0, 3.0], atol=1e-6)
    with pytest.raises(ValueError):
        finite_diff_grad(lambda v: 0.0, [0.0], h=0)


# --------------------------------------------------------------------------
# backends

needs_compiled = pytest.mark.skipif(_backend.compiled_kernels is None, reason="compiled kernels not built")


@needs_compiled
@settings(max_examples=200, deadline=None)
@given(hs.integers(0, 2**31 - 1))
def test_backends_bit_identical_on_lp(seed):
    lp = _random_lp(np.random.default_rng(seed))
    a = lp_solve(lp, kernels=_backend.python_kernels)
    b = lp_solve(lp, kernels=_backend.compiled_kernels)
    assert a.status is b.status and a.iterations == b.iterations
    if a.optimal:
        assert np.array_equal(a.x, b.x) and a.value == b.value


@needs_compiled
@settings(max_examples=200, deadline=None)
@given(hs.integers(0, 2**31 - 1))
def test_backends_bit_identical_on_elementwise_kernels(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal(50) * 3, rng.standard_normal(50) * 3
    a[:5] = 0.0
    b[3:8] = 0.0
    py, cy = _backend.python_kernels, _backend.compiled_kernels
    assert np.array_equal(np.asarray(py.delta_dist_l1(a, b)), np.asarray(cy.delta_dist_l1(a, b)))
    assert np.array_equal(np.asarray(py.phi_terms(a, b)), np.asarray(cy.phi_terms(a, b)))
    for u, v in zip(py.project_omega(a, b), cy.project_omega(a, b)):
        assert np.array_equal(np.asarray(u), np.asarray(v))
    M = rng.integers(-3, 4, size=(4, 5)).astype(float)
    assert py.echelon_rank(M.copy(), 1e-9) == cy.echelon_rank(M.copy(), 1e-9)


def test_backend_selection_reported():
    assert _backend.BACKEND in ("cython", "python")


def test_lp_without_variables():
    assert lp_solve(LinearProgram(c=np.zeros(0), A_eq=np.zeros((2, 0)), b_eq=[0.0, 0.0])).optimal
    out = lp_solve(LinearProgram(c=np.zeros(0), A_eq=np.zeros((2, 0)), b_eq=[1.0, 0.0]))
    assert out.status is LpStatus.INFEASIBLE


def test_caratheodory_ignores_roundoff_in_dependence():
    # two parallel extras; the null vector carries a ~1e-16 entry on the third
    extras = [([-2.0, 2.0], 0.8040864677797719), ([1.0, -1.0], 0.7426601606211798), ([-1.0, -2.0], 0.671900160856739)]
    x = sum((a * np.array(v) for v, a in extras), np.zeros(2))
    out = caratheodory_reduce(x, [], extras)
    assert len(out.kept) == 2 and out.residual <= 1e-8
