import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cgc.applications.dimred import (DimRedConfig, ReducedObjective, active_subspace, autoencode, kernel_pca,
                                     reduction_problem)
from cgc.applications.emd import EmdConfig, emd_energy, energy_map
from cgc.applications.modes import ModeProblem, default_modes, mode_decompose
from cgc.applications.pde import grid_problem, manufactured_solve, pde_solve
from cgc.applications.phase import iterate_phase, phase_refine
from cgc.applications.warp import TrajectoryObjective, WarpConfig, deep_warp, two_moons
from cgc.errors import DegenerateWindow, InputError
from cgc.gp import interpolate, point_evals, regress
from cgc.kernels import Gaussian, LinearBias, gabor
from cgc.optimizer import init_state
from cgc.solver import CgcObjective


# --------------------------------------------------------------------------
# mode decomposition


def test_single_mode_is_the_interpolant():
    t = np.linspace(0, 1, 30)
    v = np.sin(5 * t)
    (m,) = mode_decompose(ModeProblem(t, v, [Gaussian(0.1)]))
    ref = interpolate(Gaussian(0.1), point_evals(t), v)
    xs = np.linspace(0, 1, 77)[:, None]
    np.testing.assert_allclose(m(xs), ref(xs), atol=1e-10)


def test_modes_share_coefficients_and_sum_to_signal():
    p, _ = default_modes()
    models = mode_decompose(p)
    for m in models[1:]:
        assert np.array_equal(m.coeffs, models[0].coeffs)
    total = sum(m(p.grid[:, None]) for m in models)
    assert np.abs(total - p.values).max() <= 1e-8


def test_mode_problem_validation():
    with pytest.raises(InputError):
        ModeProblem([0.0, 0.0, 1.0], [1.0, 2.0, 3.0], [Gaussian(1.0)])
    with pytest.raises(InputError):
        ModeProblem([0.0, 1.0], [1.0, 2.0], [])


# --------------------------------------------------------------------------
# energy maps


def _small_cfg():
    return EmdConfig(np.linspace(0, 1, 21), np.geomspace(60.0, 300.0, 25))


def test_zero_signal_has_zero_energy():
    t = np.linspace(0, 1, 200)
    E, _ = energy_map(t, np.zeros_like(t), _small_cfg())
    assert np.all(E == 0.0)
    res = emd_energy(t, np.zeros_like(t), _small_cfg())
    assert res.n_components == 0 and np.all(res.labels == -1)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_energy_is_nonnegative_for_dictionary_signals(seed):
    rng = np.random.default_rng(seed)
    cfg = _small_cfg()
    t = np.linspace(0, 1, 200)
    v = np.zeros_like(t)
    for _ in range(3):
        tau, om = rng.choice(cfg.taus), rng.choice(cfg.omegas)
        c, s = gabor(tau, om, cfg.alpha, t)
        v += rng.standard_normal() * c + rng.standard_normal() * s
    E, _ = energy_map(t, v, cfg)
    assert E.min() >= -1e-10


def test_emd_config_validation():
    with pytest.raises(InputError):
        EmdConfig([0.0, 1.0], [-1.0, 2.0])
    with pytest.raises(InputError):
        EmdConfig([1.0, 0.0], [1.0, 2.0])


# --------------------------------------------------------------------------
# phase refinement

T = np.linspace(0, 1, 400)
TAU = np.linspace(0.1, 0.9, 17)


def _theta(s):
    return 2 * np.pi * (20 * s + 3 * s ** 2)


def test_exact_phase_needs_no_correction():
    a, d = phase_refine(T, np.cos(_theta(T)), _theta, TAU)
    assert np.abs(d).max() <= 1e-3
    assert np.abs(a - 1.0).max() <= 1e-2


@pytest.mark.parametrize("shift", [0.2, -0.35])
def test_shifted_phase_is_recovered(shift):
    _, d = phase_refine(T, np.cos(_theta(T) + shift), _theta, TAU)
    assert np.abs(d - shift).max() <= 1e-2


def test_phase_scalar_and_degenerate_window():
    a, d = phase_refine(T, np.cos(_theta(T)), _theta, 0.5)
    assert isinstance(d, float) and abs(d) <= 1e-3
    with pytest.raises(DegenerateWindow):
        phase_refine(T, np.cos(_theta(T)), _theta, 0.5, alpha=1e-3)


def test_unaccelerated_iteration_still_contracts():
    res = iterate_phase(T, np.cos(_theta(T)), 1.02 * _theta(T), accelerate=False, max_iter=5)
    assert res.corrections[-1] < res.corrections[0]


# --------------------------------------------------------------------------
# PDE


def test_zero_problem_has_zero_solution():
    p = grid_problem(12, 1, lambda X: np.zeros(len(X)), lambda X: np.zeros(len(X)), "affine(a=0.0, b=0.0)")
    m = pde_solve(p)
    assert np.linalg.norm(m.coeffs) <= 1e-8


def test_pde_problem_validation():
    with pytest.raises(InputError):
        grid_problem(10, 2, lambda X: 0 * X[:, 0], lambda X: 0 * X[:, 0])
    p, _ = manufactured_solve(9, 2)
    with pytest.raises(InputError):
        type(p)(p.interior + 1.0, p.boundary, p.f, p.g)


# --------------------------------------------------------------------------
# dimensionality reduction


def test_exact_low_rank_data_is_reconstructed():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((30, 2)) @ rng.standard_normal((2, 5))
    r = autoencode(X, DimRedConfig(2, sigma1=1e-6, sigma2=1e-6))
    assert np.linalg.norm(r.reconstruct(X) - X) <= 1e-6 * np.linalg.norm(X)


def test_identity_features_match_autoencoder():
    X = np.random.default_rng(1).standard_normal((25, 4))
    a = autoencode(X, DimRedConfig(2))
    b = kernel_pca(X, lambda z: z, 2)
    np.testing.assert_allclose(a.reconstruct(X), b.reconstruct(X), atol=1e-10)


def test_optimum_beats_pca_start():
    X = np.random.default_rng(1).standard_normal((25, 4))
    cfg = DimRedConfig(2)
    r = autoencode(X, cfg)
    U, s, _ = np.linalg.svd(X - X.mean(axis=0), full_matrices=False)
    assert r.objective <= ReducedObjective(X, X, cfg).value(U[:, :2] * s[:2])


def test_full_dimensional_bottleneck_reproduces_outputs():
    rng = np.random.default_rng(2)
    X = rng.uniform(-1, 1, (20, 2))

    def F(Z):
        return np.sin(Z @ np.array([1.0, -0.5]))

    # the mismatch scales with the nugget sigma^2
    r = active_subspace(F, X, DimRedConfig(2, Gaussian(1.0), Gaussian(1.0), sigma1=1e-5, sigma2=1e-5))
    assert np.abs(r.reconstruct(X).ravel() - F(X)).max() <= 1e-6


def test_graph_and_reduced_objectives_agree():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((12, 3))
    cfg = DimRedConfig(2, Gaussian(1.5), Gaussian(1.0), sigma1=0.3, sigma2=0.2)
    p = reduction_problem(X, X, cfg)
    obj = CgcObjective(p)
    s = init_state(p, "zeros")
    Z = rng.standard_normal((12, 2))
    s.Z["z"], s.Y["g"], s.Y["f"] = Z, Z.copy(), X.copy()
    assert obj(s) == pytest.approx(ReducedObjective(X, X, cfg).value(Z), rel=1e-10)


def test_dimred_validation():
    with pytest.raises(InputError):
        DimRedConfig(0)
    with pytest.raises(InputError):
        autoencode(np.zeros((5, 2)), DimRedConfig(2))


# --------------------------------------------------------------------------
# warping


MOONS = two_moons(20, seed=2)


def test_stiff_warp_reduces_to_regression():
    X, y = MOONS
    w = deep_warp(X, y, WarpConfig(nu=1e9))
    assert np.abs(w.transform(X) - X).max() <= 1e-3
    ref = regress(Gaussian(1.0), point_evals(X), y, 1e-3)(X)
    assert np.linalg.norm(w(X).ravel() - ref) <= 1e-4 * np.linalg.norm(ref)


def test_warp_models_satisfy_representer_identity():
    X, y = MOONS
    cfg = WarpConfig(depth=2)
    w = deep_warp(X, y, cfg)
    Q = w.trajectory
    for s, v in enumerate(w.warps):
        lhs = v(Q[s]).reshape(Q[s].shape)
        rhs = (Q[s + 1] - Q[s]) - cfg.r * v.coeffs.reshape(Q[s].shape)
        assert np.abs(lhs - rhs).max() <= 1e-8 * np.abs(rhs).max()


def test_warp_beats_unwarped_baseline():
    X, y = MOONS
    w = deep_warp(X, y, WarpConfig(depth=2))
    tr = np.asarray(w.objective_trace)
    assert np.all(np.diff(tr) < 0)
    base = regress(Gaussian(1.0), point_evals(X), y, 1e-3)(X)
    assert np.sum((w(X).ravel() - y) ** 2) < np.sum((base - y) ** 2)


def test_identity_trajectory_objective_matches_regression():
    X, y = MOONS
    cfg = WarpConfig(depth=1)
    obj = TrajectoryObjective(X, y[:, None], cfg)
    # no motion: only the readout term, lam * y^T (K + I / lam)^-1 y
    K = Gaussian(1.0)(X, X) + np.eye(len(X)) / cfg.lam
    assert obj.value(X.ravel()) == pytest.approx(cfg.lam * y @ np.linalg.solve(K, y), rel=1e-10)


def test_warp_validation():
    with pytest.raises(InputError):
        WarpConfig(depth=0)
    with pytest.raises(InputError):
        deep_warp(np.zeros((4, 2)), np.zeros(3))


def test_linear_kernel_reduction_problem_is_valid():
    X = np.random.default_rng(0).standard_normal((6, 3))
    p = reduction_problem(X, X, DimRedConfig(1, LinearBias(0.0), LinearBias(0.0)))
    assert set(p.kernels) == {"g", "f"}
