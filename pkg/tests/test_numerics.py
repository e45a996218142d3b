import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from darkpool_impact.numerics import (
    EULER_GAMMA,
    OptimizerOptions,
    QuadratureError,
    expint_ei,
    expint_ei_array,
    golden_section,
    integrate_adaptive,
    nelder_mead,
)
from oracles import ei_quadrature, trapezoid


def test_ei_reference_values():
    assert expint_ei(1.0) == pytest.approx(1.895117816355937, rel=0, abs=1e-12)
    assert expint_ei(-1.0) == pytest.approx(-0.21938393439552, rel=0, abs=1e-12)


def test_ei_small_argument_limit():
    x = 1e-8
    assert abs(expint_ei(x) - math.log(x) - EULER_GAMMA) <= 1e-7
    assert abs(expint_ei(-x) - math.log(x) - EULER_GAMMA) <= 1e-7


@pytest.mark.parametrize("x", [-2.0, -0.5, 0.5, 1.0, 3.0])
def test_ei_derivative_relation(x):
    h = 1e-5
    d = (expint_ei(x + h) - expint_ei(x - h)) / (2 * h)
    assert d == pytest.approx(math.exp(x) / x, rel=1e-6)


@pytest.mark.parametrize("x", [-45.0, -30.0, -5.0, -0.3, 0.02, 2.5, 29.9, 30.1, 39.9, 40.1, 60.0, 200.0])
def test_ei_matches_quadrature_across_branches(x):
    assert expint_ei(x) == pytest.approx(ei_quadrature(x), rel=1e-12)


def test_ei_edge_cases():
    with pytest.raises(ValueError):
        expint_ei(0.0)
    assert math.isnan(expint_ei(math.nan))
    assert abs(expint_ei(-800.0)) < 1e-300
    assert expint_ei(800.0) == math.inf
    arr = expint_ei_array([[-1.0, 1.0], [2.0, -2.0]])
    assert arr.shape == (2, 2)
    assert arr[0, 1] == pytest.approx(1.895117816355937, abs=1e-12)


def test_integrate_polynomial_and_empty_interval():
    assert integrate_adaptive(lambda x: x * x, 0.0, 1.0, tol=1e-12) == pytest.approx(1 / 3, abs=1e-13)
    assert integrate_adaptive(lambda x: x * x, 0.0, 0.0) == 0.0
    assert integrate_adaptive(lambda x: x, 1.0, 0.0) == pytest.approx(-0.5, abs=1e-14)


def test_integrate_against_brute_force_trapezoid():
    f = lambda t: np.exp(-t) / (2.0 - t)
    val = integrate_adaptive(f, 0.0, 1.0, tol=1e-10)
    assert val == pytest.approx(trapezoid(f, 0.0, 1.0, 2_000_000), abs=1e-9)


def test_integrate_raises_on_nonintegrable():
    with pytest.raises(QuadratureError):
        integrate_adaptive(lambda x: 1.0 / x, 0.0, 1.0, tol=1e-12, max_depth=12)


def test_nelder_mead_quadratic():
    res = nelder_mead(lambda v: (v[0] - 3.0) ** 2, [0.0])
    assert res.converged
    assert res.arg[0] == pytest.approx(3.0, abs=1e-6)


def test_nelder_mead_rosenbrock():
    rosen = lambda v: (1 - v[0]) ** 2 + 100 * (v[1] - v[0] ** 2) ** 2
    res = nelder_mead(rosen, [-1.2, 1.0], opts=OptimizerOptions(max_iters=5000, xtol=1e-12, ftol=1e-20))
    assert res.value <= 1e-8
    np.testing.assert_allclose(res.arg, [1.0, 1.0], atol=1e-3)


def test_nelder_mead_constant_objective():
    res = nelder_mead(lambda v: 4.2, [0.5, -0.5])
    assert res.converged
    np.testing.assert_allclose(res.arg, [0.5, -0.5])
    assert res.value == 4.2


def test_nelder_mead_respects_box():
    res = nelder_mead(lambda v: (v[0] - 3.0) ** 2, [0.0], box=[(-1.0, 1.0)])
    assert res.arg[0] == pytest.approx(1.0, abs=1e-6)


def test_golden_section_finds_minimum():
    x, v = golden_section(lambda x: (x - 0.3) ** 2 + 1.0, 0.0, 1.0, tol=1e-10)
    # function values only resolve the argument to about sqrt(machine eps)
    assert x == pytest.approx(0.3, abs=1e-6)
    assert v == pytest.approx(1.0, abs=1e-14)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(-5, 5), min_size=2, max_size=2),
    st.lists(st.floats(-3, 3), min_size=2, max_size=2),
)
def test_nelder_mead_never_worse_than_start(center, start):
    obj = lambda v: abs(v[0] - center[0]) ** 1.5 + 3.0 * (v[1] - center[1]) ** 2 + math.sin(v[0])
    res = nelder_mead(obj, start, opts=OptimizerOptions(max_iters=300))
    assert res.value <= obj(np.asarray(start))
    assert res.value == pytest.approx(obj(res.arg), rel=1e-12, abs=1e-15)
