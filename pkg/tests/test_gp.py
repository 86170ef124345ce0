import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cgc.errors import InputError
from cgc.gp import (RepresenterModel, interpolate, point_evals, predict, predict_many, quad_form, regress,
                    rkhs_norm_sq)
from cgc.kernels import Gaussian, PointEval, TimeDeriv, WhiteNoise, gram


def _instance(seed, n=6, d=1):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-2, 2, (n, d))
    return point_evals(X), rng.standard_normal(n)


def test_interpolate_single_anchor():
    m = interpolate(Gaussian(1.0), [PointEval(0.0)], [2.0])
    assert predict(m, PointEval(0.0)) == pytest.approx(2.0, abs=1e-14)
    assert predict(m, PointEval(1.0)) == pytest.approx(0.7357589, abs=1e-7)
    assert rkhs_norm_sq(m) == pytest.approx(4.0, rel=1e-14)


def test_interpolate_matches_kkt_system():
    fs, y = _instance(3, 6)
    k = Gaussian(0.8)
    K = gram(k, fs).entries
    n = len(fs)
    # stationarity K c + K mu = 0 and feasibility K c = y
    kkt = np.block([[K, K], [K, np.zeros((n, n))]])
    c = np.linalg.solve(kkt, np.r_[np.zeros(n), y])[:n]
    m = interpolate(k, fs, y)
    np.testing.assert_allclose(m.coeffs.ravel(), c, rtol=1e-8)


def test_regress_examples():
    k = Gaussian(1.0)
    m = regress(k, [PointEval(0.0)], [1.0], 1.0)
    assert predict(m, PointEval(0.0)) == pytest.approx(0.5, abs=1e-14)
    fs, y = _instance(1)
    big = regress(k, fs, y, 1e12)
    assert np.max(np.abs(predict_many(big, fs))) <= 1e-6
    small = regress(k, fs, y, 1e-12)
    exact = interpolate(k, fs, y)
    xs = np.linspace(-2, 2, 9)[:, None]
    np.testing.assert_allclose(small(xs), exact(xs), atol=1e-5)


def test_quad_form_examples():
    pts = [PointEval(0.0), PointEval(1.0)]
    assert quad_form(WhiteNoise(1.0), pts, [3.0, 4.0]) == pytest.approx(25.0)
    assert quad_form(Gaussian(1.0), pts, [0.0, 0.0]) == 0.0
    fs, y = _instance(5, 5)
    lam = 7.0
    k = Gaussian(1.0)
    f = regress(k, fs, y, 1.0 / lam)
    expected = rkhs_norm_sq(f) + lam * np.sum((predict_many(f, fs) - y) ** 2)
    assert quad_form(k, fs, y, lam) == pytest.approx(expected, rel=1e-8)


def test_predict_linearity_and_zero():
    fs, y = _instance(2)
    k = Gaussian(1.0)
    zero = RepresenterModel(k, fs, np.zeros(len(fs)))
    assert predict(zero, PointEval(0.3)) == 0.0
    assert rkhs_norm_sq(zero) == 0.0
    a = interpolate(k, fs, y)
    b = interpolate(k, fs, 2.0 * y[::-1])
    both = RepresenterModel(k, fs, a.coeffs + b.coeffs)
    x = PointEval(0.37)
    assert predict(both, x) == pytest.approx(predict(a, x) + predict(b, x), abs=1e-12)


def test_time_derivative_prediction_matches_finite_differences():
    fs, y = _instance(4)
    m = interpolate(Gaussian(1.0), fs, y)
    h = 1e-5
    fd = (predict(m, PointEval(0.2 + h)) - predict(m, PointEval(0.2 - h))) / (2 * h)
    assert predict(m, TimeDeriv(0.2)) == pytest.approx(fd, rel=1e-4)


def test_rkhs_norm_equals_quad_form():
    fs, y = _instance(6)
    k = Gaussian(1.0)
    assert rkhs_norm_sq(interpolate(k, fs, y)) == pytest.approx(quad_form(k, fs, y, math.inf), rel=1e-10)


def test_model_json_round_trip():
    fs, y = _instance(7, d=2)
    m = regress(Gaussian(0.7), fs, y, 0.01)
    back = RepresenterModel.from_json(m.to_json())
    X = np.random.default_rng(0).standard_normal((5, 2))
    np.testing.assert_array_equal(back(X), m(X))


def test_shape_errors():
    with pytest.raises(InputError):
        interpolate(Gaussian(1.0), [PointEval(0.0)], [1.0, 2.0])
    with pytest.raises(InputError):
        regress(Gaussian(1.0), [PointEval(0.0)], [1.0], -1.0)


# --------------------------------------------------------------------------
# properties

seeds = st.integers(0, 10 ** 6)


@settings(max_examples=40, deadline=None)
@given(seed=seeds, n=st.integers(1, 10), d=st.integers(1, 3))
def test_interpolation_reproduces_data(seed, n, d):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-3, 3, (n, d))
    y = rng.standard_normal(n)
    fs = point_evals(X)
    k = Gaussian(0.5)
    m = interpolate(k, fs, y)
    trace = np.trace(gram(k, fs).entries)
    if m.jitter <= 1e-8 * trace:
        assert np.max(np.abs(predict_many(m, fs) - y)) <= 1e-8 * (1 + np.max(np.abs(y)))


@settings(max_examples=40, deadline=None)
@given(seed=seeds, l1=st.floats(1e-2, 1e4), l2=st.floats(1e-2, 1e4))
def test_quad_form_nonincreasing_in_noise(seed, l1, l2):
    fs, y = _instance(seed, 5)
    k = Gaussian(1.0)
    lo, hi = min(l1, l2), max(l1, l2)
    assert quad_form(k, fs, y, lo) <= quad_form(k, fs, y, hi) * (1 + 1e-10) + 1e-12
    assert quad_form(k, fs, y, hi) <= quad_form(k, fs, y, math.inf) * (1 + 1e-10) + 1e-12


@settings(max_examples=40, deadline=None)
@given(seed=seeds, n=st.integers(2, 8))
def test_quad_form_grows_with_constraints(seed, n):
    fs, y = _instance(seed, n)
    k = Gaussian(0.5)
    sub = quad_form(k, fs[:-1], y[:-1])
    assert quad_form(k, fs, y) >= sub * (1 - 1e-8) - 1e-10


@settings(max_examples=30, deadline=None)
@given(seed=seeds, a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_predict_superposition(seed, a, b):
    fs, _ = _instance(seed)
    rng = np.random.default_rng(seed + 1)
    c1, c2 = rng.standard_normal((2, len(fs)))
    k = Gaussian(1.0)
    X = np.linspace(-2, 2, 5)[:, None]
    lhs = RepresenterModel(k, fs, a * c1 + b * c2)(X)
    rhs = a * RepresenterModel(k, fs, c1)(X) + b * RepresenterModel(k, fs, c2)(X)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12 * (1 + np.abs(rhs).max()))
