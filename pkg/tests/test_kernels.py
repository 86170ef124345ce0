import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from cgc.applications.modes import ModeSetup  # noqa: F401  registers mode phases
from cgc.errors import InputError, NotPositiveDefinite, UnsupportedFunctional
from cgc.kernels import (
    GaborAtom,
    Gaussian,
    Laplacian,
    LinearBias,
    LinearFunctional,
    PartialDeriv,
    PointEval,
    Product,
    Scale,
    Sum,
    TimeDeriv,
    TrigWindow,
    WhiteNoise,
    chol_jitter,
    gabor,
    gram,
    k_eval,
    parse_kernel,
    register_phase,
)


def test_gaussian_point_values():
    k = Gaussian(1.0)
    assert k_eval(k, PointEval(0.0), PointEval(0.0)) == 1.0
    assert k_eval(k, PointEval(0.0), PointEval(1.0)) == pytest.approx(0.3678794, abs=1e-7)
    assert k_eval(k, PartialDeriv(0.0, 0), PointEval(0.0)) == 0.0


def _fd_value(k, x, y, h=1e-4):
    """Central differences of k(x, y) in the first argument."""
    x = np.asarray(x, dtype=float)
    d = len(x)
    grad, lap = np.zeros(d), 0.0
    f0 = k_eval(k, PointEval(x), PointEval(y))
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        fp = k_eval(k, PointEval(x + e), PointEval(y))
        fm = k_eval(k, PointEval(x - e), PointEval(y))
        grad[i] = (fp - fm) / (2 * h)
        lap += (fp - 2 * f0 + fm) / h ** 2
    return grad, lap


@pytest.mark.parametrize("k", [Gaussian(0.7), LinearBias(0.5), Sum((Gaussian(1.3), LinearBias(1.0))),
                               Product(Gaussian(1.0), LinearBias(2.0)), Scale(2.5, Gaussian(0.9))])
def test_derivatives_match_finite_differences(k):
    x, y = np.array([0.3, -0.4]), np.array([-0.2, 0.5])
    grad, lap = _fd_value(k, x, y)
    for i in range(2):
        assert k_eval(k, PartialDeriv(x, i), PointEval(y)) == pytest.approx(grad[i], rel=1e-4, abs=1e-7)
    assert k_eval(k, Laplacian(x), PointEval(y)) == pytest.approx(lap, rel=1e-4, abs=1e-5)


def test_second_argument_derivatives_match_finite_differences():
    k, h = Gaussian(0.8), 1e-4
    x, y = np.array([0.1, 0.2]), np.array([0.4, -0.3])
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        fd = (k_eval(k, PartialDeriv(x, 0), PointEval(y + e)) - k_eval(k, PartialDeriv(x, 0), PointEval(y - e))) / (2 * h)
        assert k_eval(k, PartialDeriv(x, 0), PartialDeriv(y, i)) == pytest.approx(fd, rel=1e-4)
    lap = 0.0
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        lap += (k_eval(k, Laplacian(x), PointEval(y + e)) - 2 * k_eval(k, Laplacian(x), PointEval(y))
                + k_eval(k, Laplacian(x), PointEval(y - e))) / h ** 2
    assert k_eval(k, Laplacian(x), Laplacian(y)) == pytest.approx(lap, rel=1e-4)


def test_time_derivative_of_trig_window():
    k, h = TrigWindow(0.3, "mode1"), 1e-4
    s, t = 0.41, 0.47
    fd = (k_eval(k, PointEval(s + h), PointEval(t)) - k_eval(k, PointEval(s - h), PointEval(t))) / (2 * h)
    assert k_eval(k, TimeDeriv(s), PointEval(t)) == pytest.approx(fd, rel=1e-4)


def test_gram_examples():
    assert gram(Gaussian(1.0), [PointEval(0.0)]).entries.tolist() == [[1.0]]
    pts = [PointEval(x) for x in (0.0, 0.5, 2.0)]
    np.testing.assert_array_equal(gram(WhiteNoise(1.0), pts).entries, np.eye(3))
    rng = np.random.default_rng(0)
    G = gram(Gaussian(1.0), [PointEval(x) for x in rng.standard_normal((5, 2))]).entries
    assert np.linalg.eigvalsh(G).min() >= -1e-10


def test_chol_jitter_examples():
    L, jit = chol_jitter(np.eye(2))
    np.testing.assert_array_equal(L, np.eye(2))
    assert jit == 0.0
    L, jit = chol_jitter(np.ones((2, 2)))
    assert jit > 0
    np.testing.assert_allclose(L @ L.T, np.ones((2, 2)) + jit * np.eye(2), atol=1e-14)
    with pytest.raises(NotPositiveDefinite):
        chol_jitter(np.diag([1.0, -1.0]))


def test_gabor_values():
    tau, om, al = 0.3, 50.0, 20.0
    c, s = gabor(tau, om, al, tau)
    assert s == 0.0
    assert c == pytest.approx((2 / math.pi) ** 0.25 * math.sqrt(om / al), rel=1e-14)
    # closed form of the squared cosine atom integrated over the real line
    amp2 = math.sqrt(2 / math.pi) * om / al
    a = 2 * om ** 2 / al ** 2
    exact = amp2 * 0.5 * math.sqrt(math.pi / a) * (1 + math.exp(-om ** 2 / a))
    num, _ = integrate.quad(lambda t: gabor(tau, om, al, t)[0] ** 2, tau - 3, tau + 3, limit=400)
    assert num == pytest.approx(exact, rel=1e-8)
    d = 0.01
    env = (2 / math.pi) ** 0.25 * math.sqrt(om / al) * math.exp(-(om * d / al) ** 2)
    assert gabor(tau, om, al, tau + d)[0] / (env * math.cos(om * d)) == pytest.approx(1.0, abs=1e-10)
    with pytest.raises(InputError):
        gabor(0.0, -1.0, 1.0, 0.0)


def test_gabor_atom_kernel_is_outer_product():
    k = GaborAtom(0.5, 30.0, 20.0)
    t = np.linspace(0, 1, 7)
    c, s = gabor(0.5, 30.0, 20.0, t)
    np.testing.assert_allclose(k(t[:, None], t[:, None]), np.outer(c, c) + np.outer(s, s), atol=1e-14)


def test_trig_window_wide_limit():
    register_phase("linear7", lambda t: 7.0 * t)
    k = TrigWindow(1e6, "linear7")
    s, t = np.array([[0.1], [0.8]]), np.array([[0.3], [0.55]])
    np.testing.assert_allclose(k(s, t), np.cos(7.0 * (s - t.T)), atol=1e-6)


def test_white_noise_rejects_derivatives():
    with pytest.raises(UnsupportedFunctional):
        k_eval(WhiteNoise(1.0), PartialDeriv(0.0, 0), PointEval(0.0))


def test_kernel_text_round_trip():
    for text in ["gaussian(ls=0.5)", "linear(bias=1.0)", "white(var=0.01)", "trigwindow(ls=0.2, phase=mode1)",
                 "gabor(tau=0.5, omega=30.0, alpha=20.0)", "sum(gaussian(ls=1.0), linear(bias=0.0))",
                 "product(gaussian(ls=1.0), linear(bias=2.0))", "scale(3.0, gaussian(ls=1.0))"]:
        assert parse_kernel(text).text == text
        assert parse_kernel(parse_kernel(text).text) == parse_kernel(text)


def test_functional_json_round_trip():
    for f in (PointEval((0.1, 0.2)), PartialDeriv((0.1, 0.2), 1), Laplacian(0.3)):
        assert LinearFunctional.from_json(f.to_json()) == f
    with pytest.raises(InputError):
        PartialDeriv(0.0, 1)


# --------------------------------------------------------------------------
# properties

KERNELS = [Gaussian(0.6), Gaussian(2.0), LinearBias(1.0), Sum((Gaussian(1.0), LinearBias(0.5))),
           Product(Gaussian(1.5), Gaussian(0.7)), Scale(3.0, Gaussian(1.0))]
coord = st.floats(-2.0, 2.0, allow_nan=False)


@st.composite
def functionals(draw, d=2):
    x = tuple(draw(coord) for _ in range(d))
    kind = draw(st.sampled_from(["value", "deriv", "laplacian"]))
    return LinearFunctional(kind, x, draw(st.integers(0, d - 1)))


@settings(max_examples=60, deadline=None)
@given(k=st.sampled_from(KERNELS), phi=functionals(), psi=functionals())
def test_kernel_symmetry(k, phi, psi):
    assert k_eval(k, phi, psi) == pytest.approx(k_eval(k, psi, phi), abs=1e-12, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(k=st.sampled_from(KERNELS), seed=st.integers(0, 10 ** 6), n=st.integers(1, 20))
def test_gram_is_positive_semidefinite(k, seed, n):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-2, 2, (n, 2))
    kinds = rng.choice(["value", "deriv", "laplacian"], n)
    fs = [LinearFunctional(kd, tuple(x), int(rng.integers(0, 2))) for kd, x in zip(kinds, X)]
    G = gram(k, fs).entries
    assert np.linalg.eigvalsh(G).min() >= -1e-8 * max(np.trace(G), 1.0)


@settings(max_examples=30, deadline=None)
@given(x=st.tuples(coord, coord), y=st.tuples(coord, coord), k=st.sampled_from(KERNELS[:4]))
def test_derivative_property(x, y, k):
    grad, lap = _fd_value(k, x, y)
    for i in range(2):
        assert k_eval(k, PartialDeriv(x, i), PointEval(y)) == pytest.approx(grad[i], rel=1e-4, abs=1e-6)
    assert k_eval(k, Laplacian(x), PointEval(y)) == pytest.approx(lap, rel=1e-4, abs=1e-4)
