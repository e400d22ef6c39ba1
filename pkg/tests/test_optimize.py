import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize as sopt

from rfqfit.optimize import (
    ALPHA,
    IDENTITY,
    POSITIVE,
    PROBABILITY,
    Bijection,
    FitProblem,
    Transform,
    line_search,
    multistart,
    powell_maximize,
)


def identity(dim):
    return Transform((IDENTITY,) * dim)


def test_quadratic_bowl():
    center = np.array([1.0, -2.0, 0.5])
    A = np.array([[3.0, 0.5, 0.0], [0.5, 1.0, 0.2], [0.0, 0.2, 2.0]])
    f = lambda x: -float((x - center) @ A @ (x - center))
    res = powell_maximize(FitProblem(f, identity(3), np.zeros(3)))
    assert res.converged
    np.testing.assert_allclose(res.x, center, atol=1e-5)
    assert res.value == pytest.approx(0.0, abs=1e-9)


def test_rosenbrock_matches_scipy():
    rosen = lambda x: -float(sopt.rosen(x))
    res = powell_maximize(FitProblem(rosen, identity(2), np.array([-1.2, 1.0]), max_iterations=500))
    ref = sopt.minimize(sopt.rosen, [-1.2, 1.0], method="Powell", options={"xtol": 1e-10, "ftol": 1e-14})
    np.testing.assert_allclose(res.x, ref.x, atol=1e-3)
    np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-3)


def test_history_is_monotone_and_value_is_fresh():
    f = lambda x: -float(np.sum((x - 3.0) ** 4) + np.sum(x**2))
    problem = FitProblem(f, identity(4), np.zeros(4))
    res = powell_maximize(problem)
    assert np.all(np.diff(res.history) >= 0.0)
    assert f(res.x) == pytest.approx(res.value, abs=1e-9)
    assert res.evaluations == problem.evaluations


def test_line_search_contract():
    f = lambda x: -float((x[0] - 2.5) ** 2)
    s = line_search(f, np.array([0.0]), np.array([1.0]))
    assert s == pytest.approx(2.5, abs=1e-6)
    s = line_search(f, np.array([0.0]), np.array([-1.0]))
    assert s == pytest.approx(-2.5, abs=1e-6)
    # Already at the maximum: no step.
    assert abs(line_search(f, np.array([2.5]), np.array([1.0]))) < 1e-6


def test_flat_objective_stops():
    res = powell_maximize(FitProblem(lambda x: 1.0, identity(3), np.ones(3)))
    assert res.converged
    np.testing.assert_array_equal(res.x, np.ones(3))


def test_non_convergence_reported():
    rosen = lambda x: -float(sopt.rosen(x))
    res = powell_maximize(FitProblem(rosen, identity(4), np.full(4, -1.5), max_iterations=2))
    assert not res.converged and res.iterations == 2
    assert "no convergence" in res.message


def test_infinite_start_rejected():
    with pytest.raises(ValueError):
        powell_maximize(FitProblem(lambda x: -math.inf, identity(1), np.zeros(1)))


def test_objective_errors_read_as_minus_infinity():
    def f(x):
        if x[0] > 1.0:
            raise ArithmeticError("outside")
        return -float((x[0] - 2.0) ** 2)

    res = powell_maximize(FitProblem(f, identity(1), np.zeros(1)))
    assert res.x[0] <= 1.0
    assert res.x[0] == pytest.approx(1.0, abs=1e-3)


def test_transformed_coordinates_respect_bounds():
    # Unconstrained optimum at sigma < 0 and p > 1: the transform keeps both legal.
    f = lambda x: -float((x[0] + 1.0) ** 2 + (x[1] - 2.0) ** 2)
    res = powell_maximize(FitProblem(f, Transform((POSITIVE, PROBABILITY)), np.array([1.0, 0.5]), max_iterations=60))
    assert res.x[0] > 0.0 and PROBABILITY.lower <= res.x[1] <= PROBABILITY.upper
    assert res.x[1] > 0.99


@settings(max_examples=200, deadline=None)
@given(st.sampled_from([IDENTITY, POSITIVE, ALPHA, PROBABILITY]), st.floats(0.0, 1.0))
def test_transform_round_trip(bij, q):
    if bij is IDENTITY:
        x = -50.0 + 100.0 * q
    elif bij is POSITIVE:
        x = math.exp(-10.0 + 20.0 * q)
    else:
        x = bij.lower + (bij.upper - bij.lower) * (0.001 + 0.998 * q)
    assert bij.forward(bij.inverse(x)) == pytest.approx(x, rel=1e-12, abs=1e-12)


def test_probability_boundary_is_representable():
    t = PROBABILITY.inverse(1.0)
    assert PROBABILITY.forward(t) >= 1.0 - 1e-4 - 1e-12
    with pytest.raises(ValueError):
        POSITIVE.inverse(0.0)
    assert Bijection("logistic", 1e-3, 2.0).forward(50.0) == pytest.approx(2.0)


def test_multistart_single_run_is_plain_powell():
    f = lambda x: -float(np.sum((x - np.array([0.3, -0.7])) ** 2))
    a = multistart(FitProblem(f, identity(2), np.zeros(2)), starts=1)
    b = powell_maximize(FitProblem(f, identity(2), np.zeros(2)))
    np.testing.assert_array_equal(a.x, b.x)
    assert a.restarts_used == 0


def test_multistart_on_convex_problem_agrees():
    f = lambda x: -float(np.sum((x - 1.0) ** 2))
    res = multistart(FitProblem(f, identity(3), np.zeros(3)), starts=4, seed=1)
    np.testing.assert_allclose(res.x, 1.0, atol=1e-5)
    assert res.restarts_used == 3


def test_multistart_escapes_poor_local_maximum():
    # Two bumps; the start sits on the lower one.
    f = lambda x: float(0.5 * np.exp(-np.sum((x + 2.0) ** 2)) + np.exp(-np.sum((x - 2.0) ** 2) / 4.0))
    single = multistart(FitProblem(f, identity(2), np.full(2, -2.0)), starts=1)
    multi = multistart(FitProblem(f, identity(2), np.full(2, -2.0)), starts=12, seed=4, jitter=3.0)
    low = -sopt.minimize(lambda x: -f(x), [-2.0, -2.0], method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-14}).fun
    high = -sopt.minimize(lambda x: -f(x), [2.0, 2.0], method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-14}).fun
    assert single.value == pytest.approx(low, abs=1e-8)
    assert multi.value == pytest.approx(high, abs=1e-8)
    assert multi.value > single.value


def test_multistart_rejects_zero_starts():
    with pytest.raises(ValueError):
        multistart(FitProblem(lambda x: 0.0, identity(1), np.zeros(1)), starts=0)
