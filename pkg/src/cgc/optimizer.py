"""Damped Gauss-Newton minimisation with equality constraints and restarts."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import linalg

from .errors import InputError, NonFiniteObjective, NonFiniteState
from .gp import interpolate, point_evals, regress
from .graph_model import NodeKind
from .kernels import tags_to_ops
from .objective import Objective
from .solver import CgcProblem, SolveState

log = logging.getLogger(__name__)


class Termination(str, Enum):
    CONVERGED = "converged"
    MAX_ITER = "max_iter"
    STALLED = "stalled"


@dataclass
class OptimizerOptions:
    max_outer: int = 100
    tol_rel: float = 1e-8
    lm_damping: float = 1e-3
    fd_step: float = 1e-5
    restarts: int = 1
    seed: int = 0
    max_damping: float = 1e12
    damping_factor: float = 3.0

    def __post_init__(self):
        if self.max_outer < 1 or self.restarts < 1:
            raise InputError("max_outer and restarts must be at least 1")
        if not (self.tol_rel > 0 and self.lm_damping > 0 and self.fd_step > 0):
            raise InputError("tolerances, damping and step must be positive")


@dataclass
class TraceEntry:
    objective: float
    step_norm: float
    damping: float
    accepted: bool


@dataclass
class Trace:
    entries: list[TraceEntry] = field(default_factory=list)

    @property
    def objectives(self) -> list[float]:
        return [e.objective for e in self.entries]

    def __len__(self):
        return len(self.entries)


@dataclass
class MinimizeResult:
    x: np.ndarray
    value: float
    termination: Termination
    trace: Trace
    iterations: int
    restart: int = 0


def _check_finite(x, F):
    if not np.all(np.isfinite(x)):
        raise NonFiniteState("optimizer state became non-finite")
    if not np.isfinite(F):
        raise NonFiniteObjective("objective is non-finite at the current state")


class _Reduced:
    """Gauss-Newton model at a feasible point, in the free variables only.

    Constraints are eliminated locally: column-pivoted QR of the constraint
    Jacobian picks one dependent variable per constraint and a tangent step
    ``dz`` in the free variables moves the dependent ones by ``T dz``. The
    previous dependent set is kept while its block stays well conditioned,
    so the elimination does not flip between variables along the path.
    """

    def __init__(self, obj: Objective, x: np.ndarray, dep: np.ndarray | None = None):
        self.F, g, J, r = obj.gn_factor(x)
        n = obj.n
        if obj.has_constraints:
            c, C = obj.constraints(x)
            m = C.shape[0]
            if dep is None or np.linalg.cond(C[:, dep]) > 1e8:
                _, piv = linalg.qr(C, mode="r", pivoting=True, check_finite=False)
                dep = np.sort(piv[:m])
            self.dep = dep
            self.free = np.setdiff1d(np.arange(n), dep)
            Cd = C[:, self.dep]
            self.T = -_solve(Cd, C[:, self.free])
        else:
            self.dep, self.free = np.zeros(0, int), np.arange(n)
            self.T = np.zeros((0, n))
        Jr = J[:, self.free] + J[:, self.dep] @ self.T
        self.g = g[self.free] + self.T.T @ g[self.dep]
        self.A = np.sqrt(2.0) * Jr
        self.b = -np.sqrt(2.0) * r
        # gradient not captured by the least-squares model (moving anchors)
        self.extra = self.g - self.A.T @ (-self.b)
        D = np.sum(self.A * self.A, axis=0)
        self.D = np.maximum(D, 1e-12 * max(1.0, D.max(initial=0.0)))
        self._normal = None

    def step(self, mu: float) -> np.ndarray:
        """Damped step ``dz`` minimising ``g.dz + dz^T (A^T A + mu D) dz / 2``.

        Solved on the column-scaled normal equations by Cholesky; when the
        factor is too ill-conditioned the stacked least-squares system is
        solved by QR instead.
        """
        nf = len(self.free)
        if nf == 0:
            return np.zeros(0)
        S = np.sqrt(self.D)
        if self._normal is None:
            B = self.A / S
            self._normal = (B.T @ B, -(self.g / S))
        N, rhs = self._normal
        try:
            L = linalg.cholesky(N + mu * np.eye(nf), lower=True, check_finite=False)
            d = np.diag(L)
            if (d.max() / d.min()) ** 2 < 1e10:
                w = linalg.cho_solve((L, True), rhs, check_finite=False)
                return w / S
        except linalg.LinAlgError:
            pass
        M = np.vstack([self.A / S, np.sqrt(mu) * np.eye(nf)])
        Q, R = linalg.qr(M, mode="economic", check_finite=False)
        w = linalg.solve_triangular(R, Q.T @ np.concatenate([self.b, np.zeros(nf)]), check_finite=False)
        extra = self.extra / S
        if np.linalg.norm(extra) > 1e-12 * (1.0 + np.linalg.norm(self.g / S)):
            v = linalg.solve_triangular(R, -extra, trans="T", check_finite=False)
            w = w + linalg.solve_triangular(R, v, check_finite=False)
        return w / S

    def lift(self, x: np.ndarray, dz: np.ndarray) -> np.ndarray:
        xn = x.copy()
        xn[self.free] += dz
        xn[self.dep] += self.T @ dz
        return xn

    def newton(self) -> tuple[float, float]:
        """Newton decrement ``g^T H^-1 g / 2`` on the tangent space and the Newton step norm."""
        if len(self.free) == 0:
            return 0.0, 0.0
        dz = self.step(1e-10)
        full = np.concatenate([dz, self.T @ dz])
        return float(-0.5 * self.g @ dz), float(np.linalg.norm(full))


def _solve(M, B):
    try:
        lu = linalg.lu_factor(M, check_finite=False)
        X = linalg.lu_solve(lu, B, check_finite=False)
        if np.all(np.isfinite(X)):
            return X
    except (linalg.LinAlgError, ValueError):
        pass
    return np.linalg.lstsq(M, B, rcond=None)[0]


def _restore(obj: Objective, x: np.ndarray, dep: np.ndarray, max_iter: int = 20):
    """Newton iteration on the dependent variables until ``c(x) = 0``; ``None`` on failure."""
    x = x.copy()
    prev = np.inf
    for _ in range(max_iter):
        c, C = obj.constraints(x)
        err = np.max(np.abs(c), initial=0.0)
        if err <= 1e-11 * (1.0 + np.max(np.abs(x), initial=0.0)):
            return x
        if not np.isfinite(err) or err > 2.0 * prev:
            return None
        prev = err
        x[dep] -= _solve(C[:, dep], c)
    return None


def _run(obj: Objective, x0: np.ndarray, opts: OptimizerOptions) -> MinimizeResult:
    x = obj.project(np.array(x0, dtype=float)) if obj.has_constraints else np.array(x0, dtype=float)
    trace = Trace()
    model = _Reduced(obj, x) if obj.n else None
    F = model.F if model else obj.value(x)
    _check_finite(x, F)
    trace.entries.append(TraceEntry(F, 0.0, opts.lm_damping, True))
    if obj.n == 0:
        return MinimizeResult(x, F, Termination.CONVERGED, trace, 0)
    mu = opts.lm_damping
    rejects = 0
    it = 0
    fresh = True
    while it < opts.max_outer:
        if fresh:
            dec, size = model.newton()
            # the step test stops zero-residual problems, where the decrement stays close to F
            if F <= 1e-300 or dec <= opts.tol_rel * max(F, 1e-300) \
                    or size <= opts.tol_rel * (1.0 + np.linalg.norm(x)):
                return MinimizeResult(x, F, Termination.CONVERGED, trace, it)
            fresh = False
        it += 1
        xn = model.lift(x, model.step(mu))
        if obj.has_constraints:
            xn = _restore(obj, xn, model.dep)
        Fn = np.inf
        if xn is not None:
            try:
                Fn = obj.value(xn)
            except (np.linalg.LinAlgError, FloatingPointError):
                pass
        ok = bool(np.isfinite(Fn) and Fn < F)
        trace.entries.append(TraceEntry(float(Fn) if np.isfinite(Fn) else float("inf"),
                                        float(np.linalg.norm(xn - x)) if xn is not None else float("inf"),
                                        mu, ok))
        if ok:
            rel = (F - Fn) / max(abs(F), 1e-300)
            x, Fold = xn, F
            model = _Reduced(obj, x, model.dep)
            F = model.F
            _check_finite(x, F)
            fresh = True
            mu = max(mu / opts.damping_factor, 1e-12)
            rejects = 0
            if rel < opts.tol_rel and Fold - F < opts.tol_rel * max(abs(Fold), 1e-300):
                return MinimizeResult(x, F, Termination.CONVERGED, trace, it)
        else:
            if mu >= opts.max_damping:
                rejects += 1
                if rejects >= 3:
                    return MinimizeResult(x, F, Termination.STALLED, trace, it)
            mu = min(mu * opts.damping_factor, opts.max_damping)
    return MinimizeResult(x, F, Termination.MAX_ITER, trace, it)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("CGC_THREADS", "1")))
    except ValueError:
        return 1


def minimize(obj: Objective, init, opts: OptimizerOptions | None = None):
    """Minimise ``obj`` from ``init``; returns ``(state, trace, termination)``.

    ``state`` is ``obj.unpack`` of the best point found. See
    :func:`minimize_flat` for the restart scheme.
    """
    res = minimize_flat(obj, init, opts)
    return obj.unpack(res.x), res.trace, res.termination


def minimize_flat(obj: Objective, x0, opts: OptimizerOptions | None = None) -> MinimizeResult:
    """Minimise ``obj`` from ``x0`` (a flat vector or a state ``obj.pack`` accepts).

    Each restart after the first perturbs ``x0`` with seeded Gaussian noise of
    scale ``0.1 * obj.perturbation_scale()``; the lowest final objective wins.
    Restarts run on ``CGC_THREADS`` worker threads; results do not depend on
    the thread count.
    """
    opts = opts or OptimizerOptions()
    x0 = x0 if isinstance(x0, np.ndarray) and x0.ndim == 1 and x0.size == obj.n else obj.pack(x0)
    starts = [np.array(x0, dtype=float)]
    if opts.restarts > 1:
        rng = np.random.default_rng(opts.seed)
        scale = 0.1 * obj.perturbation_scale()
        for _ in range(opts.restarts - 1):
            starts.append(x0 + scale * rng.standard_normal(x0.shape))
    if len(starts) == 1 or _threads() == 1:
        results = [_run(obj, s, opts) for s in starts]
    else:
        with ThreadPoolExecutor(max_workers=_threads()) as pool:
            results = list(pool.map(lambda s: _run(obj, s, opts), starts))
    best = 0
    for i, r in enumerate(results):
        r.restart = i
        if r.value < results[best].value:
            best = i
    res = results[best]
    log.debug("minimize: %s after %d iterations, F=%.6g", res.termination.value, res.iterations, res.value)
    return res


def fd_grad(f, x, h: float = 5e-4) -> np.ndarray:
    """Fourth-order central-difference gradient with step ``h (1 + |x_i|)``.

    The five-point stencil is exact for polynomials up to degree four, which
    allows a step large enough to keep rounding error small on objectives
    of large magnitude.
    """
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        s = h * (1.0 + abs(x[i]))
        vals = []
        for k in (2.0, 1.0, -1.0, -2.0):
            xk = x.copy()
            xk[i] += k * s
            v = f(xk)
            if not np.isfinite(v):
                raise NonFiniteObjective(f"objective is not finite at a difference point of coordinate {i}")
            vals.append(v)
        g[i] = (-vals[0] + 8.0 * vals[1] - 8.0 * vals[2] + vals[3]) / (12.0 * s)
    return g


def check_grad(obj: Objective, x, h: float = 5e-4) -> float:
    """Largest relative mismatch ``|g_fd - g| / (1 + |g|)`` between FD and analytic gradients."""
    x = x if isinstance(x, np.ndarray) and x.ndim == 1 else obj.pack(x)
    if x.size == 0:
        return 0.0
    g = obj.gradient(x)
    gfd = fd_grad(obj.value, x, h)
    return float(np.max(np.abs(gfd - g) / (1.0 + np.abs(g))))


INIT_STRATEGIES = ("zeros", "observed_mean", "per_node_regression")


def _fill(values, obs, strategy):
    out = np.where(obs[:, None], values, 0.0)
    if strategy != "zeros" and obs.any():
        out[~obs] = values[obs].mean(axis=0)
    return out


def _regress_fill(p: CgcProblem, Z: dict, known: dict[str, np.ndarray]) -> None:
    """Fill unobserved rows of nodes reachable by an unknown edge from a complete node."""
    g = p.graph
    progress = True
    while progress:
        progress = False
        for fn, members in g.unknown_functions().items():
            for e in members:
                if e.functionals and e.tags != ("value",):
                    continue
                src, tgt = e.source, e.target
                if not known[src].all() or known[tgt].all():
                    continue
                rows = known[tgt]
                if not rows.any():
                    continue
                lam = p.relax.l1(e.name)
                sigma2 = 1e-8 if lam == np.inf else 1.0 / lam
                m = regress(p.kernels[fn], point_evals(Z[src][rows]), Z[tgt][rows], sigma2)
                pred = m(Z[src])
                pred = pred if pred.ndim == 2 else pred[:, None]
                Z[tgt] = np.where(rows[:, None], Z[tgt], pred)
                known[tgt] = np.ones_like(rows)
                progress = True
        # derivative edges sharing a function with a completed value edge
        for fn, members in g.unknown_functions().items():
            value_edges = [e for e in members if not e.functionals or e.tags == ("value",)]
            for e in members:
                if e in value_edges or known[e.target].all():
                    continue
                base = next((v for v in value_edges if known[v.target].all() and known[v.source].all()), None)
                if base is None or e.source != base.source:
                    continue
                X = Z[e.source]
                m = interpolate(p.kernels[fn], point_evals(X), Z[base.target][:, 0])
                pred = np.stack([m(X, op) for op in tags_to_ops(e.tags, X.shape[1])], axis=1)
                rows = known[e.target]
                Z[e.target] = np.where(rows[:, None], Z[e.target], pred)
                known[e.target] = np.ones_like(rows)
                progress = True


def init_state(p: CgcProblem, strategy: str = "observed_mean") -> SolveState:
    """Initial state: observed entries copied from the data, the rest per ``strategy``.

    ``zeros`` and ``observed_mean`` fill each node independently.
    ``per_node_regression`` regresses each unknown-edge target on a complete
    source with the edge's kernel, then fills derivative nodes by
    differentiating the interpolant of the matching value node. Edge
    outputs are set to ``f(Z_src)`` for known edges and to an even share of
    ``Z_target`` minus the known contributions for unknown edges.
    """
    if strategy not in INIT_STRATEGIES:
        raise InputError(f"unknown init strategy {strategy!r}")
    g, N = p.graph, p.n_samples
    Z, known = {}, {}
    for n in g.nodes:
        obs = p.data.observed(n.name)
        vals = p.data.values.get(n.name, np.zeros((N, n.dim)))
        Z[n.name] = np.where(obs[:, None], vals, 0.0)
        known[n.name] = obs.copy()
    if strategy == "per_node_regression":
        _regress_fill(p, Z, known)
    for n in g.nodes:
        if not known[n.name].all():
            Z[n.name] = _fill(Z[n.name], known[n.name], "zeros" if strategy == "zeros" else "mean")
    for n in g.nodes:
        if n.kind == NodeKind.AGGREGATE:
            Z[n.name] = _concat(g, Z, n.name)
    Y = {}
    for e in g.edges:
        if e.is_known:
            Y[e.name] = e.role.fn(Z[e.source]) if N else np.zeros((0, g.output_dim(e)))
    for n in g.nodes:
        inc = g.incoming(n.name)
        unk = [e for e in inc if e.is_unknown]
        if not unk:
            continue
        rest = Z[n.name] - sum((Y[e.name] for e in inc if e.is_known), np.zeros_like(Z[n.name]))
        for e in unk:
            Y[e.name] = rest / len(unk)
    return SolveState(Z, Y)


def _concat(g, Z, name):
    parts = []
    for w in g.wires(name):
        src = g.node(w.source)
        parts.append(_concat(g, Z, src.name) if src.kind == NodeKind.AGGREGATE else Z[src.name])
    return np.concatenate(parts, axis=1)
