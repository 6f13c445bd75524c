import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from irsfl.errors import BracketError, DomainError
from irsfl.math_kernels import (
    BracketedRootProblem,
    lambert_w_m1,
    lambert_w_m1_branch,
    minimize_unimodal,
    solve_monotone,
)
from oracles import wm1_oracle

INV_E = math.exp(-1.0)


def test_branch_point():
    assert lambert_w_m1(-INV_E) == -1.0


def test_known_value_minus_two():
    assert lambert_w_m1(-2.0 * math.exp(-2.0)) == pytest.approx(-2.0, rel=1e-14)


def test_matches_bisection_oracle_at_minus_005():
    assert lambert_w_m1(-0.05) == pytest.approx(wm1_oracle(-0.05), rel=1e-14)


@pytest.mark.parametrize("x", [0.0, 0.1, -0.4, math.nan, -math.inf])
def test_domain_errors(x):
    with pytest.raises(DomainError):
        lambert_w_m1(x)


def test_vectorized_matches_scalar():
    xs = -INV_E * np.array([0.999999, 0.5, 1e-3, 1e-200])
    ws = lambert_w_m1(xs)
    assert ws.shape == xs.shape
    for x, w in zip(xs, ws):
        assert w == lambert_w_m1(float(x))


def test_residual_on_random_sample():
    rng = np.random.default_rng(0)
    x = -INV_E * rng.random(1000)
    x = x[x < 0]
    w = lambert_w_m1(x)
    assert np.all(w <= -1.0)
    assert np.max(np.abs(w * np.exp(w) - x) / np.abs(x)) <= 1e-10


@given(st.floats(min_value=1e-300, max_value=1.0, exclude_max=True))
def test_inverse_property(frac):
    x = -INV_E * frac
    w = lambert_w_m1(x)
    assert w <= -1.0
    assert abs(w * math.exp(w) - x) <= 1e-12 * abs(x) or abs(w + 1) < 1e-7


def test_monotone_on_sorted_samples():
    # the lower branch falls from -1 at the branch point to -inf as x -> 0-
    x = np.sort(-INV_E * np.random.default_rng(1).random(2000))
    x = x[x < 0]
    assert np.all(np.diff(lambert_w_m1(x)) <= 0)


@given(st.floats(min_value=0.0, max_value=0.999))
def test_branch_variant_matches_direct(eta):
    direct = lambert_w_m1((eta - 1.0) * INV_E)
    via = lambert_w_m1_branch(eta)
    # the direct call loses digits near the branch point, so compare loosely there
    assert via == pytest.approx(direct, rel=1e-15 + 1e-15 / max(math.sqrt(eta), 1e-8))


def test_branch_variant_accuracy_near_branch_point():
    import mpmath

    mpmath.mp.dps = 50
    for eta in [1e-16, 1e-12, 1e-8, 1e-5, 3e-4]:
        ref = float(mpmath.lambertw((mpmath.mpf(eta) - 1) / mpmath.e, -1).real)
        assert lambert_w_m1_branch(eta) == pytest.approx(ref, rel=1e-15)


def test_solve_monotone_linear():
    assert solve_monotone(BracketedRootProblem(lambda x: x, 0.5, 0.0, 1.0)) == pytest.approx(0.5, abs=1e-15)


def test_solve_monotone_square():
    assert solve_monotone(BracketedRootProblem(lambda x: x * x, 4.0, 0.0, 10.0)) == pytest.approx(2.0, rel=1e-14)


def test_solve_monotone_rate_shape():
    f = lambda x: x * math.log2(1 + 1 / x)
    root = solve_monotone(BracketedRootProblem(f, 0.9, 1e-9, 1e3))
    coarse = solve_monotone(BracketedRootProblem(f, 0.9, 1e-9, 1e3, tol=1e-10))
    assert abs(f(root) - 0.9) <= 1e-12
    assert root == pytest.approx(coarse, rel=1e-9)


def test_solve_monotone_decreasing_evaluator():
    assert solve_monotone(BracketedRootProblem(lambda x: -x, -0.25, 0.0, 1.0)) == pytest.approx(0.25)


def test_solve_monotone_bad_bracket():
    with pytest.raises(BracketError):
        solve_monotone(BracketedRootProblem(lambda x: x, 5.0, 0.0, 1.0))


@given(st.floats(0.01, 100.0), st.floats(1e-3, 1e3))
def test_solve_monotone_stays_in_bracket(target, scale):
    p = BracketedRootProblem(lambda x: scale * x ** 3, target * scale, 0.0, 10.0)
    x = solve_monotone(p)
    assert p.lo <= x <= p.hi
    assert abs(p.evaluator(x) - p.target) <= 1e-12 * max(1.0, abs(p.target))


def test_minimize_unimodal_parabola():
    x, fx = minimize_unimodal(lambda xs: (np.asarray(xs) - 0.3) ** 2, 1e-3, 10.0, rtol=1e-12)
    assert x == pytest.approx(0.3, rel=1e-6)
    assert fx <= 1e-12


def test_minimize_unimodal_handles_infeasible_left_part():
    f = lambda xs: np.where(np.asarray(xs) < 1.0, np.inf, np.asarray(xs) + 1.0 / np.asarray(xs))
    x, fx = minimize_unimodal(f, 0.01, 100.0)
    assert x == pytest.approx(1.0, rel=1e-6)
    assert fx == pytest.approx(2.0, rel=1e-9)
