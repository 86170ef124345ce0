import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cgc.errors import InputError
from cgc.graph_model import Graph, Node, SampleSet
from cgc.objective import LeastSquares
from cgc.optimizer import (OptimizerOptions, Termination, check_grad, fd_grad, init_state, minimize,
                           minimize_flat)
from cgc.solver import CgcProblem


def _bowl(c):
    c = np.asarray(c, dtype=float)
    return LeastSquares(lambda x: x - c, c.size, lambda x: np.eye(c.size))


def _rosenbrock():
    def r(x):
        return np.array([10.0 * (x[1] - x[0] ** 2), 1.0 - x[0]])

    def J(x):
        return np.array([[-20.0 * x[0], 10.0], [-1.0, 0.0]])

    return LeastSquares(r, 2, J)


class _Scaled(LeastSquares):
    """Bowl whose reported gradient is off by a constant factor."""

    def __init__(self, c, factor):
        super().__init__(lambda x: x - c, len(c), lambda x: np.eye(len(c)))
        self.factor = factor

    def gradient(self, x):
        return self.factor * super().gradient(x)


def test_quadratic_bowl_converges_quickly():
    # damped steps shrink the error by mu = 1e-3, 1e-3/3, 1e-3/9
    c = np.array([1.0, -0.5, 2.0])
    res = minimize_flat(_bowl(c), np.zeros(3))
    assert res.termination == Termination.CONVERGED
    assert res.iterations <= 3
    assert np.linalg.norm(res.x - c) <= 1e-10


def test_rosenbrock_reaches_minimum():
    res = minimize_flat(_rosenbrock(), np.array([-1.2, 1.0]), OptimizerOptions(max_outer=200, tol_rel=1e-14))
    assert res.value <= 1e-8
    np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-4)


def test_accepted_objectives_decrease():
    res = minimize_flat(_rosenbrock(), np.array([-1.2, 1.0]), OptimizerOptions(max_outer=200))
    acc = [e.objective for e in res.trace.entries if e.accepted]
    assert np.all(np.diff(acc) < 0)


def test_damping_adapts_to_step_quality():
    opts = OptimizerOptions(max_outer=200, lm_damping=1e-9)
    res = minimize_flat(_rosenbrock(), np.array([-1.2, 1.0]), opts)
    ents = res.trace.entries[1:]
    assert any(not e.accepted for e in ents)
    for a, b in zip(ents, ents[1:]):
        if a.accepted:
            assert b.damping == pytest.approx(max(a.damping / opts.damping_factor, 1e-12))
        else:
            assert b.damping == pytest.approx(min(a.damping * opts.damping_factor, opts.max_damping))


def test_fd_grad_of_constant_and_linear():
    x = np.array([0.3, -1.0, 2.0])
    np.testing.assert_array_equal(fd_grad(lambda z: 5.0, x), np.zeros(3))
    a = np.array([1.5, -2.0, 0.25])
    np.testing.assert_allclose(fd_grad(lambda z: float(a @ z), x), a, rtol=1e-10)


def test_check_grad_detects_wrong_gradients():
    c = np.array([1.0, 2.0])
    x = c + 1e4
    assert check_grad(_bowl(c), x) <= 1e-9
    # reported 4d against true 2d gives |2d| / (1 + 4d) -> 1/2
    assert check_grad(_Scaled(c, 2.0), x) == pytest.approx(0.5, abs=1e-3)


def test_init_state_strategies():
    g = Graph((Node("y"),))
    data = SampleSet(g.node_names, {"y": np.array([1.0, 0.0, 3.0])}, np.array([[True], [False], [True]]))
    p = CgcProblem(g, {}, data)
    assert init_state(p, "zeros").Z["y"].ravel().tolist() == [1.0, 0.0, 3.0]
    assert init_state(p, "observed_mean").Z["y"].ravel().tolist() == [1.0, 2.0, 3.0]
    with pytest.raises(InputError):
        init_state(p, "random")


def test_options_validation():
    with pytest.raises(InputError):
        OptimizerOptions(max_outer=0)
    with pytest.raises(InputError):
        OptimizerOptions(tol_rel=0.0)


def test_restarts_are_deterministic(monkeypatch):
    opts = OptimizerOptions(restarts=4, seed=3, max_outer=200)
    a = minimize_flat(_rosenbrock(), np.array([-1.2, 1.0]), opts)
    b = minimize_flat(_rosenbrock(), np.array([-1.2, 1.0]), opts)
    monkeypatch.setenv("CGC_THREADS", "3")
    c = minimize_flat(_rosenbrock(), np.array([-1.2, 1.0]), opts)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.x, c.x)
    assert a.restart == b.restart == c.restart
    assert a.trace.objectives == c.trace.objectives


def test_minimize_returns_unpacked_state():
    state, trace, term = minimize(_bowl([2.0, 1.0]), np.zeros(2))
    np.testing.assert_allclose(state, [2.0, 1.0], atol=1e-8)
    assert term == Termination.CONVERGED and len(trace) >= 2


# --------------------------------------------------------------------------
# properties


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10 ** 6), n=st.integers(1, 6))
def test_linear_least_squares_solved_exactly(seed, n):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n + 3, n))
    b = rng.standard_normal(n + 3)
    obj = LeastSquares(lambda x: A @ x - b, n, lambda x: A)
    res = minimize_flat(obj, np.zeros(n), OptimizerOptions(tol_rel=1e-14))
    ref, *_ = np.linalg.lstsq(A, b, rcond=None)
    np.testing.assert_allclose(res.x, ref, atol=1e-6 * (1 + np.abs(ref).max()))
    assert res.value <= res.trace.entries[0].objective


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_check_grad_on_smooth_functions(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, 3))
    obj = LeastSquares(lambda x: np.sin(a * x) + b * x ** 2, 3, lambda x: np.diag(a * np.cos(a * x) + 2 * b * x))
    assert check_grad(obj, rng.uniform(-1, 1, 3)) <= 1e-8
