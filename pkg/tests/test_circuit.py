import numpy as np
import pytest

from cgc.applications.circuit import (VARIABLES, CircuitConfig, build_circuit, circuit_graph, run_circuit,
                                      sample_mask, trajectory)
from cgc.errors import InputError
from cgc.graph_model import NodeKind, validate


def _const(v):
    return lambda x: np.full_like(np.asarray(x, dtype=float), v)


LINEAR = dict(L1=_const(1.0), L2=_const(0.5), R=_const(2.0), C=_const(0.3))


def test_graph_shape():
    g = circuit_graph()
    assert validate(g) == []
    assert all(g.node(v).kind == NodeKind.PRIMAL for v in VARIABLES) and len(VARIABLES) == 14
    assert len(g.unknown_functions()) == 10


def test_zero_drive_gives_zero_trajectory():
    c = CircuitConfig(drive=lambda t: 0.0 * np.asarray(t))
    _, ys = trajectory(c, t_end=2.0)
    assert np.all(ys == 0.0)


def test_step_halving_on_linear_circuit():
    c = CircuitConfig(**LINEAR)
    _, a = trajectory(c, 1e-3, 2.0)
    _, b = trajectory(c, 5e-4, 2.0)
    assert np.abs(a[-1] - b[-1]).max() <= 1e-6 * np.abs(b[-1]).max()


def test_fourth_order_convergence():
    c = CircuitConfig()
    _, ref = trajectory(c, 0.05 / 16, 2.0)
    _, a = trajectory(c, 0.05, 2.0)
    _, b = trajectory(c, 0.025, 2.0)
    ratio = np.linalg.norm(a[-1] - ref[-1]) / np.linalg.norm(b[-1] - ref[-1])
    assert 12.0 <= ratio <= 20.0


def test_sample_mask():
    m = sample_mask(50, 14, 0.0, 1)
    assert m[:, 0].all() and not m[:, 1:].any()
    assert sample_mask(50, 14, 1.0, 1).all()
    frac = np.mean([sample_mask(100, 14, 0.07, s)[:, 1:].mean() for s in range(1000)])
    assert 0.06 <= frac <= 0.08
    with pytest.raises(InputError):
        sample_mask(5, 3, 1.5, 0)


def test_config_rejects_bad_truths():
    with pytest.raises(InputError):
        CircuitConfig(R=lambda i: -np.ones_like(i))
    with pytest.raises(InputError):
        CircuitConfig(obs_prob=2.0)


def test_observed_fraction_of_built_problem():
    p = build_circuit(CircuitConfig(obs_prob=0.5, seed=3))
    assert p.data.observed("t").all()
    frac = np.mean([p.data.observed(v).mean() for v in VARIABLES[1:]])
    assert 0.35 <= frac <= 0.65


def test_full_information_recovery():
    _, errs = run_circuit(CircuitConfig(obs_prob=1.0, lam=1e7))
    assert max(errs.values()) <= 1e-3
