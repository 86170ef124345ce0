"""Digital twin of a nonlinear RLC circuit recovered from scarce measurements.

The circuit obeys

    i1 + i3 = i2,        i3 = C(V3) dV3/dt,      V2 - V3 = R(i3) i3,
    -V2 = L2(i2) di2/dt, V2 - V1 = L1(i1) di1/dt,

with unknown positive R, L1, L2, C handled through their logarithms
``r, l1, l2, c``. The completion graph has one node per state variable
(time, voltages, currents, time derivatives, log-parameters), unknown
edges from time to every voltage and current (derivative nodes share the
function of their primitive through a ``dt`` functional), unknown edges
from currents/voltage to the log-parameters, and one noisy known relation
per circuit law: the law's residual feeds a random node of variance
``1/lambda`` that is constrained to equal that residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import InputError, NonFiniteState
from ..graph_model import Edge, Graph, Known, Node, NodeKind, SampleSet, Unknown, Wire
from ..kernels import Gaussian, Kernel
from ..known import KnownFn
from ..solver import CgcProblem, RelaxationConfig

INF = math.inf

VARIABLES = ("t", "V1", "V2", "V3", "dV3", "i1", "di1", "i2", "di2", "i3", "l1", "l2", "r", "c")

# unknown edges: name -> (source, target, shared function or None, functionals)
UNKNOWN_EDGES = {
    "f_V1": ("t", "V1", None, ()),
    "f_V2": ("t", "V2", None, ()),
    "f_V3": ("t", "V3", None, ()),
    "f_dV3": ("t", "dV3", "f_V3", ("dt",)),
    "f_i1": ("t", "i1", None, ()),
    "f_di1": ("t", "di1", "f_i1", ("dt",)),
    "f_i2": ("t", "i2", None, ()),
    "f_di2": ("t", "di2", "f_i2", ("dt",)),
    "f_i3": ("t", "i3", None, ()),
    "f_l1": ("i1", "l1", None, ()),
    "f_l2": ("i2", "l2", None, ()),
    "f_r": ("i3", "r", None, ()),
    "f_c": ("V3", "c", None, ()),
}

# circuit laws: aggregate name -> (argument nodes, builtin)
RELATIONS = {
    "kcl": (("i1", "i2", "i3"), "circuit_kcl"),
    "cap": (("c", "dV3", "i3"), "circuit_cap"),
    "res": (("r", "V2", "V3", "i3"), "circuit_res"),
    "ind2": (("l2", "V2", "di2"), "circuit_ind2"),
    "ind1": (("l1", "V1", "V2", "di1"), "circuit_ind1"),
}

# which recovered function describes each circuit element, and its argument
ELEMENTS = {"L1": ("f_l1", "i1"), "L2": ("f_l2", "i2"), "R": ("f_r", "i3"), "C": ("f_c", "V3")}


def default_drive(t):
    return np.sin(t) + 0.5 * np.sin(3.0 * t)


def _L1(i):
    return np.exp(0.3 * np.sin(i))


def _L2(i):
    return np.exp(0.2 * np.cos(i))


def _R(i):
    return np.exp(0.5 + 0.3 * np.tanh(i))


def _C(v):
    return np.exp(-1.0 + 0.2 * np.sin(v))


@dataclass
class CircuitConfig:
    L1: Callable = _L1
    L2: Callable = _L2
    R: Callable = _R
    C: Callable = _C
    drive: Callable = default_drive
    t0: float = 0.0
    t1: float = 10.0
    n_obs: int = 100
    obs_prob: float = 0.07
    lam: float = 1000.0
    seed: int = 0
    lengthscale: float = 1.0
    dt: float = 1e-3
    initial: tuple[float, float, float] = (0.0, 0.0, 0.0)  # V3, i1, i2 at t0
    kernels: dict[str, Kernel] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.obs_prob <= 1.0:
            raise InputError("observation probability must lie in [0, 1]")
        if self.n_obs < 2 or not self.t1 > self.t0:
            raise InputError("need at least two observation times on a nonempty interval")
        if not self.lam > 0:
            raise InputError("lambda must be positive")
        probe = np.linspace(-3.0, 3.0, 61)
        for name in ("L1", "L2", "R", "C"):
            if not np.all(getattr(self, name)(probe) > 0):
                raise InputError(f"truth function {name} must be strictly positive")

    @property
    def times(self) -> np.ndarray:
        """Observation times ``t0 + s (t1 - t0) / n_obs`` for ``s = 0 .. n_obs-1``."""
        return self.t0 + np.arange(self.n_obs) * (self.t1 - self.t0) / self.n_obs

    def describe(self) -> dict:
        """JSON-friendly summary of the configuration."""
        def name(f):
            return getattr(f, "__name__", repr(f))

        return {"truth": {k: name(getattr(self, k)) for k in ("L1", "L2", "R", "C")},
                "drive": name(self.drive), "t0": self.t0, "t1": self.t1, "n_obs": self.n_obs,
                "obs_prob": self.obs_prob, "lambda": self.lam, "seed": self.seed,
                "lengthscale": self.lengthscale, "dt": self.dt, "initial": list(self.initial)}


# --------------------------------------------------------------------------
# simulator


def _rhs(c: CircuitConfig, t, y):
    V3, i1, i2 = y
    i3 = i2 - i1
    V2 = V3 + c.R(i3) * i3
    return np.array([i3 / c.C(V3), (V2 - c.drive(t)) / c.L1(i1), -V2 / c.L2(i2)])


def trajectory(c: CircuitConfig, dt: float | None = None, t_end: float | None = None):
    """RK4 states ``(V3, i1, i2)`` on the grid ``t0, t0 + dt, ...`` up to ``t_end``."""
    dt = c.dt if dt is None else dt
    t_end = c.t1 if t_end is None else t_end
    n = int(round((t_end - c.t0) / dt))
    ts = c.t0 + dt * np.arange(n + 1)
    ys = np.empty((n + 1, 3))
    y = np.array(c.initial, dtype=float)
    ys[0] = y
    for k in range(n):
        t = ts[k]
        k1 = _rhs(c, t, y)
        k2 = _rhs(c, t + dt / 2, y + dt / 2 * k1)
        k3 = _rhs(c, t + dt / 2, y + dt / 2 * k2)
        k4 = _rhs(c, t + dt, y + dt * k3)
        y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise NonFiniteState(f"circuit integration blew up at t={t + dt:.4g}")
        ys[k + 1] = y
    return ts, ys


def columns(c: CircuitConfig, t, states) -> dict[str, np.ndarray]:
    """All 14 variables (log-parameters for the RLC elements) from states at times ``t``."""
    t = np.asarray(t, dtype=float)
    V3, i1, i2 = states[:, 0], states[:, 1], states[:, 2]
    i3 = i2 - i1
    V1 = c.drive(t)
    V2 = V3 + c.R(i3) * i3
    d = np.array([_rhs(c, tk, yk) for tk, yk in zip(t, states)]).reshape(-1, 3)
    return {"t": t, "V1": V1, "V2": V2, "V3": V3, "dV3": d[:, 0], "i1": i1, "di1": d[:, 1],
            "i2": i2, "di2": d[:, 2], "i3": i3, "l1": np.log(c.L1(i1)), "l2": np.log(c.L2(i2)),
            "r": np.log(c.R(i3)), "c": np.log(c.C(V3))}


def truth_on(c: CircuitConfig, t, dt: float | None = None) -> dict[str, np.ndarray]:
    """Ground-truth variables at times ``t``; every time must be a multiple of ``dt`` past ``t0``."""
    dt = c.dt if dt is None else dt
    t = np.asarray(t, dtype=float)
    ts, ys = trajectory(c, dt, float(t.max()) if t.size else c.t0)
    idx = np.rint((t - c.t0) / dt).astype(int)
    if np.max(np.abs(ts[idx] - t), initial=0.0) > 1e-9 * max(1.0, abs(c.t1)):
        raise InputError("requested times are not on the integration grid")
    return columns(c, t, ys[idx])


def simulate_circuit(c: CircuitConfig, dt: float | None = None) -> SampleSet:
    """Fully observed samples of the 14 circuit variables at the observation times.

    Aggregate and relation nodes carry their exact values (concatenations and
    zero residuals) but are left unobserved.
    """
    dt = c.dt if dt is None else dt
    if dt > 1e-2:
        raise InputError("integration step must be at most 1e-2")
    g = circuit_graph()
    cols = truth_on(c, c.times, dt)
    values = {k: v[:, None] for k, v in cols.items()}
    for agg, (args, fn) in RELATIONS.items():
        values[agg] = np.stack([cols[a] for a in args], axis=1)
        values["W_" + agg] = KnownFn(fn)(values[agg])
    mask = np.zeros((c.n_obs, len(g.nodes)), dtype=bool)
    for v in VARIABLES:
        mask[:, g.node_index(v)] = True
    return SampleSet(g.node_names, values, mask)


def sample_mask(N: int, n_vars: int, p: float, seed: int) -> np.ndarray:
    """Column 0 always observed, the rest i.i.d. Bernoulli(p)."""
    if not 0.0 <= p <= 1.0:
        raise InputError("p must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    m = rng.random((N, n_vars)) < p
    if n_vars:
        m[:, 0] = True
    return m


# --------------------------------------------------------------------------
# completion problem


def circuit_graph(lam: float = 1000.0) -> Graph:
    nodes = [Node(v) for v in VARIABLES]
    edges = []
    for name, (src, dst, shared, tags) in UNKNOWN_EDGES.items():
        edges.append(Edge(name, src, dst, Unknown(shared or name), tags))
    for agg, (args, fn) in RELATIONS.items():
        nodes.append(Node(agg, NodeKind.AGGREGATE, len(args)))
        nodes.append(Node("W_" + agg, NodeKind.RANDOM, 1, np.eye(1) / lam))
        for slot, a in enumerate(args):
            edges.append(Edge(f"{agg}[{slot}]", a, agg, Wire(slot)))
        edges.append(Edge("law_" + agg, agg, "W_" + agg, Known(KnownFn(fn))))
    return Graph(tuple(nodes), tuple(edges))


def circuit_relaxation(lam: float = 1000.0) -> RelaxationConfig:
    """Weights ``lam`` on edges and data; the laws and node sums are exact.

    Law noise enters through the random nodes, so each law costs
    ``lam * residual^2``. Time is observed exactly.
    """
    l1 = {"law_" + a: INF for a in RELATIONS}
    l2 = {v: INF for v in VARIABLES[1:]}
    l2.update({"W_" + a: INF for a in RELATIONS})
    return RelaxationConfig(l1, l2, {"t": INF}, default=lam)


def build_circuit(c: CircuitConfig, truth: SampleSet | None = None) -> CgcProblem:
    """Completion problem from simulated data masked by ``sample_mask``."""
    g = circuit_graph(c.lam)
    full = simulate_circuit(c) if truth is None else truth
    m = sample_mask(c.n_obs, len(VARIABLES), c.obs_prob, c.seed)
    mask = np.zeros((c.n_obs, len(g.nodes)), dtype=bool)
    for j, v in enumerate(VARIABLES):
        mask[:, g.node_index(v)] = m[:, j]
    values = {v: full.values[v] for v in VARIABLES}
    data = SampleSet(g.node_names, values, mask)
    kernels = {fn: c.kernels.get(fn, Gaussian(c.lengthscale)) for fn in g.unknown_functions()}
    return CgcProblem(g, kernels, data, circuit_relaxation(c.lam))


def recovery_errors(c: CircuitConfig, models, n_grid: int = 400) -> dict[str, float]:
    """Relative L2 errors of recovered time series and RLC elements.

    Time series are compared on a uniform grid over the observation window;
    each element is compared over the range its argument visits.
    """
    ts = c.times
    span = int(round((ts[-1] - ts[0]) / c.dt))
    step = max(1, span // n_grid)
    grid = ts[0] + c.dt * np.arange(0, span + 1, step)
    truth = truth_on(c, grid)
    out = {}
    for v in ("V1", "V2", "V3", "i1", "i2", "i3"):
        pred = models["f_" + v](grid[:, None]).ravel()
        out[v] = _rel(pred, truth[v])
    for elem, (fn, arg) in ELEMENTS.items():
        lo, hi = truth[arg].min(), truth[arg].max()
        x = np.linspace(lo, hi, n_grid)
        pred = np.exp(models[fn](x[:, None]).ravel())
        out[elem] = _rel(pred, getattr(c, elem)(x))
    return out


def _rel(pred, true) -> float:
    den = np.linalg.norm(true)
    return float(np.linalg.norm(pred - true) / (den if den > 0 else 1.0))


def run_circuit(c: CircuitConfig, opts=None, init: str = "per_node_regression"):
    """Build, solve and score one circuit instance; returns ``(solution, errors)``."""
    from ..pipeline import solve

    p = build_circuit(c)
    sol = solve(p, opts, init=init)
    return sol, recovery_errors(c, sol.models)
