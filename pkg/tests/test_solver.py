import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cgc.applications.circuit import CircuitConfig, build_circuit, simulate_circuit
from cgc.applications.modes import ModeProblem, mode_decompose
from cgc.errors import InfeasibleConstraint, InvalidGraph, MissingKernel
from cgc.gp import interpolate, point_evals, quad_form, regress
from cgc.graph_model import Edge, Graph, Known, Node, NodeKind, SampleSet, Unknown
from cgc.kernels import Gaussian, LinearBias, LinearFunctional, Sum, WhiteNoise
from cgc.known import parse_known
from cgc.optimizer import OptimizerOptions, init_state
from cgc.pipeline import solve
from cgc.solver import (INF, CgcObjective, CgcProblem, RelaxationConfig, SolveState, assemble_objective,
                        extract_models, hard_variant, loss_L1, loss_L2, loss_L3)

TIGHT = OptimizerOptions(tol_rel=1e-13, max_outer=200)


def _edge_problem(relax, n=7, seed=0, k=None):
    rng = np.random.default_rng(seed)
    X = np.sort(rng.uniform(-2, 2, n))
    Y = np.sin(X) + 0.1 * rng.standard_normal(n)
    g = Graph((Node("x"), Node("y")), (Edge("f", "x", "y", Unknown("f")),))
    return CgcProblem(g, {"f": k or Gaussian(1.0)}, SampleSet.from_columns(g, {"x": X, "y": Y}), relax)


def test_known_only_graph_has_zero_objective_at_consistent_data():
    g = Graph((Node("x"), Node("y")), (Edge("e", "x", "y", Known(parse_known("exp"))),))
    X = np.linspace(-1, 1, 5)
    p = CgcProblem(g, {}, SampleSet.from_columns(g, {"x": X, "y": np.exp(X)}))
    obj = assemble_objective(p)
    s = init_state(p, "observed_mean")
    assert obj(s) == pytest.approx(0.0, abs=1e-20)
    assert loss_L1(p, s) == loss_L2(p, s) == loss_L3(p, s) == 0.0


def test_hard_single_edge_matches_quad_form():
    p = _edge_problem(RelaxationConfig.hard())
    sol = solve(p, TIGHT)
    X, Y = p.data.values["x"], p.data.values["y"].ravel()
    ref = quad_form(Gaussian(1.0), point_evals(X), Y)
    assert sol.terms["total"] == pytest.approx(ref, rel=1e-10)
    m = sol.models["f"]
    np.testing.assert_allclose(m.coeffs.ravel(), interpolate(Gaussian(1.0), point_evals(X), Y).coeffs.ravel(),
                               rtol=1e-8)


@pytest.mark.parametrize("lam", [0.5, 10.0, 1e4])
def test_relaxed_single_edge_matches_regress(lam):
    p = _edge_problem(RelaxationConfig({"f": lam}, {"y": INF}, {"x": INF, "y": INF}))
    sol = solve(p, TIGHT)
    X, Y = p.data.values["x"], p.data.values["y"].ravel()
    ref = regress(Gaussian(1.0), point_evals(X), Y, 1.0 / lam)
    np.testing.assert_allclose(sol.models["f"].coeffs.ravel(), ref.coeffs.ravel(), rtol=1e-10)
    assert sol.terms["total"] == pytest.approx(quad_form(Gaussian(1.0), point_evals(X), Y, lam), rel=1e-10)


def test_model_residual_matches_nugget_identity():
    lam = 20.0
    p = _edge_problem(RelaxationConfig({"f": lam}, {"y": 50.0}, {"x": INF, "y": 300.0}), seed=4)
    sol = solve(p, TIGHT)
    m = sol.models["f"]
    X = p.data.values["x"]
    resid = m(X).ravel() - sol.state.Y["f"].ravel()
    np.testing.assert_allclose(resid, -m.coeffs.ravel() / lam, rtol=1e-8, atol=1e-14)


def test_zero_outputs_give_zero_model():
    p = _edge_problem(RelaxationConfig())
    s = init_state(p, "observed_mean")
    s.Y["f"] = np.zeros_like(s.Y["f"])
    m = extract_models(p, s)["f"]
    assert np.all(m.coeffs == 0.0)


def test_losses():
    p = _edge_problem(RelaxationConfig({"f": 10.0}, {"y": 20.0}, {"x": 30.0, "y": 40.0}))
    s = init_state(p, "observed_mean")
    s.Y["f"] = s.Z["y"].copy()
    assert loss_L1(p, s) == loss_L2(p, s) == loss_L3(p, s) == 0.0
    d = 0.3
    s.Z["x"][2, 0] += d
    assert loss_L3(p, s) == pytest.approx(30.0 * d * d, rel=1e-12)
    s.Z["y"][1, 0] += d
    assert loss_L2(p, s) == pytest.approx(20.0 * d * d, rel=1e-12)


def test_circuit_objective_at_ground_truth():
    c = CircuitConfig(obs_prob=1.0)
    p = build_circuit(c, simulate_circuit(c))
    obj = CgcObjective(p)
    s = init_state(p, "observed_mean")
    terms = obj.terms(obj.pack(s))
    assert max(terms["L1"], terms["L2"], terms["L3"], terms["random"]) <= 1e-8
    assert loss_L1(p, s) + loss_L2(p, s) + loss_L3(p, s) <= 1e-8
    # independent sum of one quadratic form per unknown function
    ref = 0.0
    for fn, members in p.graph.unknown_functions().items():
        src = p.data.values[members[0].source]
        fs, ys = [], []
        for e in members:
            kind = "deriv" if "dt" in e.functionals else "value"
            fs += [LinearFunctional(kind, tuple(x)) for x in src]
            ys.append(p.data.values[e.target].ravel())
        ref += quad_form(p.kernels[fn], fs, np.concatenate(ys), p.relax.l1(fn))
    assert terms["rkhs"] == pytest.approx(ref, rel=1e-8)


def test_contradictory_hard_data_is_infeasible():
    g = Graph((Node("x"), Node("y")), (Edge("e", "x", "y", Known(parse_known("identity"))),))
    p = CgcProblem(g, {}, SampleSet.from_columns(g, {"x": np.zeros(3), "y": np.ones(3)}))
    with pytest.raises(InfeasibleConstraint):
        obj = hard_variant(p)
        solve(p, objective=obj)


def test_invalid_problems_are_rejected():
    g = Graph((Node("x"), Node("y")), (Edge("f", "x", "y", Unknown("f")),))
    with pytest.raises(MissingKernel):
        CgcObjective(CgcProblem(g, {}, SampleSet.empty(g)))
    bad = Graph((Node("x"), Node("z", NodeKind.AGGREGATE, 1)), ())
    with pytest.raises(InvalidGraph):
        CgcObjective(CgcProblem(bad, {}, SampleSet.empty(bad)))


def test_mode_graph_reduces_to_closed_form():
    t = np.linspace(0, 1, 40)
    v = np.sin(6 * t) + 0.5 * t + 0.05 * np.cos(40 * t)
    # each Gram is well conditioned, so neither path adds jitter
    kernels = [Gaussian(0.05), Sum((LinearBias(1.0), WhiteNoise(1e-3))), WhiteNoise(0.01)]
    names = ["w1", "w2", "w3"]
    g = Graph((Node("t"), Node("v")), tuple(Edge(n, "t", "v", Unknown(n)) for n in names))
    p = CgcProblem(g, dict(zip(names, kernels)), SampleSet.from_columns(g, {"t": t, "v": v}),
                   RelaxationConfig.hard())
    sol = solve(p, TIGHT)
    ref = mode_decompose(ModeProblem(t, v, kernels))
    for n, m in zip(names, ref):
        np.testing.assert_allclose(sol.state.Y[n].ravel(), m(t[:, None]), atol=1e-8)


def test_noise_node_equivalence():
    lam = 25.0
    relaxed = _edge_problem(RelaxationConfig({"f": INF}, {"y": INF}, {"x": INF, "y": lam}), seed=2)
    X, Y = relaxed.data.values["x"], relaxed.data.values["y"]
    g = Graph((Node("x"), Node("y"), Node("w", NodeKind.RANDOM, 1, np.eye(1) / lam), Node("o")),
              (Edge("f", "x", "y", Unknown("f")), Edge("a", "y", "o", Known(parse_known("identity"))),
               Edge("b", "w", "o", Known(parse_known("identity")))))
    hard = CgcProblem(g, {"f": Gaussian(1.0)}, SampleSet.from_columns(g, {"x": X, "o": Y}), RelaxationConfig.hard())
    a = solve(relaxed, TIGHT).terms["total"]
    b = solve(hard, TIGHT).terms["total"]
    assert a == pytest.approx(b, rel=1e-10)


def test_relaxation_residuals_shrink_as_weights_grow():
    g = Graph((Node("x"), Node("y"), Node("z")),
              (Edge("f", "x", "y", Unknown("f")), Edge("h", "y", "z", Known(parse_known("exp")))))
    rng = np.random.default_rng(1)
    X = np.linspace(-1, 1, 6)
    Z = np.exp(np.sin(2 * X)) + 0.05 * rng.standard_normal(6)
    data = SampleSet.from_columns(g, {"x": X, "z": Z})
    res = []
    for lam in (1e3, 1e5, 1e7):
        p = CgcProblem(g, {"f": Gaussian(1.0)}, data, RelaxationConfig({"f": INF}, {}, {"x": INF}, default=lam))
        s = solve(p, TIGHT, init="per_node_regression").state
        r = (np.abs(s.Z["z"] - Z[:, None]).max() + np.abs(s.Z["y"] - s.Y["f"]).max()
             + np.abs(np.exp(s.Z["y"]) - s.Z["z"]).max())
        res.append(r)
    assert res[0] > res[1] > res[2]


# --------------------------------------------------------------------------
# properties


def _chain_problem(seed, perm=None):
    rng = np.random.default_rng(seed)
    n = 6
    g = Graph((Node("x"), Node("y"), Node("z")),
              (Edge("f", "x", "y", Unknown("f")), Edge("h", "y", "z", Known(parse_known("cube")))))
    vals = {"x": rng.standard_normal(n), "y": rng.standard_normal(n), "z": rng.standard_normal(n)}
    obs = {"x": np.ones(n, bool), "y": rng.random(n) < 0.5, "z": rng.random(n) < 0.5}
    if perm is not None:
        vals = {k: v[perm] for k, v in vals.items()}
        obs = {k: v[perm] for k, v in obs.items()}
    relax = RelaxationConfig({"f": 50.0}, {"z": 30.0}, {"x": INF, "y": 200.0, "z": 70.0})
    return CgcProblem(g, {"f": Gaussian(0.8)}, SampleSet.from_columns(g, vals, obs), relax)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10 ** 6), pseed=st.integers(0, 10 ** 6))
def test_objective_is_invariant_under_sample_permutation(seed, pseed):
    perm = np.random.default_rng(pseed).permutation(6)
    p, q = _chain_problem(seed), _chain_problem(seed, perm)
    s = init_state(p, "observed_mean")
    rng = np.random.default_rng(seed + 1)
    for k in s.Z:
        s.Z[k] = s.Z[k] + 0.1 * rng.standard_normal(s.Z[k].shape)
    for k in s.Y:
        s.Y[k] = s.Y[k] + 0.1 * rng.standard_normal(s.Y[k].shape)
    t = SolveState({k: v[perm] for k, v in s.Z.items()}, {k: v[perm] for k, v in s.Y.items()})
    a, b = CgcObjective(p)(s), CgcObjective(q)(t)
    assert a == pytest.approx(b, rel=1e-10)
