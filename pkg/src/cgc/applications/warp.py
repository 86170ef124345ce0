"""Deep kernel warping as a discrete least-action problem.

Points move from ``q^1 = X`` through ``L`` warps ``q^{s+1} = q^s + v_s(q^s)``
and a readout ``f`` maps the last layer to ``Y``. Eliminating the functions
leaves an objective in the trajectory alone,

``nu / (2 dt) sum_s D_s^T (G(q^s, q^s) + r I)^-1 D_s
+ lam Y^T (K(q^{L+1}, q^{L+1}) + lam^-1 I)^-1 Y``

with ``D_s = q^{s+1} - q^s`` and ``dt = 1/L``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from ..errors import InputError
from ..gp import RepresenterModel, point_evals
from ..kernels import Gaussian, Kernel, chol_jitter, chol_solve, op_block


@dataclass
class WarpConfig:
    """Depth, action weight ``nu``, readout weight ``lam``, warp nugget ``r`` and kernels."""

    depth: int = 1
    nu: float = 1.0
    lam: float = 1e3
    r: float = 1e-2
    warp_kernel: Kernel = field(default_factory=lambda: Gaussian(1.0))
    readout_kernel: Kernel = field(default_factory=lambda: Gaussian(1.0))
    max_iter: int = 2000
    gtol: float = 1e-9

    def __post_init__(self):
        if self.depth < 1:
            raise InputError("warp depth must be at least 1")
        if not (self.nu > 0 and self.lam > 0 and self.r > 0):
            raise InputError("nu, lam and r must be positive")


@dataclass
class WarpResult:
    warps: list[RepresenterModel]
    readout: RepresenterModel
    trajectory: list[np.ndarray]
    objective_trace: list[float]
    termination: str

    def transform(self, X) -> np.ndarray:
        """Push points through every warp layer."""
        Q = np.asarray(X, dtype=float)
        if Q.ndim == 1:
            Q = Q[:, None]
        for v in self.warps:
            Q = Q + v(Q).reshape(Q.shape)
        return Q

    def __call__(self, X) -> np.ndarray:
        return self.readout(self.transform(X))


def _factor(k: Kernel, Q, nugget):
    A = k(Q, Q)
    A[np.diag_indices_from(A)] += nugget
    return chol_jitter(0.5 * (A + A.T))


def _gram_grad(k: Kernel, Q, alpha) -> np.ndarray:
    """Gradient of ``tr alpha^T K(Q, Q) alpha`` with respect to ``Q`` (times -1 for inverse forms)."""
    W = alpha @ alpha.T
    G = np.empty_like(Q)
    for a in range(Q.shape[1]):
        dK = op_block(k, ("value", 0), Q, ("value", 0), Q, shift_axis=a)
        G[:, a] = 2.0 * np.sum(W * dK, axis=1)
    return G


class TrajectoryObjective:
    """Trajectory objective with its analytic gradient in the free layers ``q^2..q^{L+1}``."""

    def __init__(self, X, Y, cfg: WarpConfig):
        self.X = np.asarray(X, dtype=float)
        self.Y = np.asarray(Y, dtype=float)
        self.cfg = cfg
        self.shape = (cfg.depth, *self.X.shape)
        self.c = cfg.nu * cfg.depth / 2.0  # nu / (2 dt)

    def layers(self, x) -> list[np.ndarray]:
        return [self.X] + list(np.asarray(x, dtype=float).reshape(self.shape))

    def value_grad(self, x):
        cfg = self.cfg
        Q = self.layers(x)
        G = [np.zeros_like(q) for q in Q]
        J = 0.0
        for s in range(cfg.depth):
            D = Q[s + 1] - Q[s]
            L, _ = _factor(cfg.warp_kernel, Q[s], cfg.r)
            beta = chol_solve(L, D)
            J += self.c * float(np.sum(D * beta))
            G[s + 1] += 2.0 * self.c * beta
            G[s] -= 2.0 * self.c * beta
            G[s] -= self.c * _gram_grad(cfg.warp_kernel, Q[s], beta)
        L, _ = _factor(cfg.readout_kernel, Q[-1], 1.0 / cfg.lam)
        alpha = chol_solve(L, self.Y)
        J += cfg.lam * float(np.sum(self.Y * alpha))
        G[-1] -= cfg.lam * _gram_grad(cfg.readout_kernel, Q[-1], alpha)
        return J, np.concatenate([g.ravel() for g in G[1:]])

    def value(self, x) -> float:
        return self.value_grad(x)[0]

    def gradient(self, x) -> np.ndarray:
        return self.value_grad(x)[1]

    def models(self, x):
        cfg = self.cfg
        Q = self.layers(x)
        warps = []
        for s in range(cfg.depth):
            L, jit = _factor(cfg.warp_kernel, Q[s], cfg.r)
            warps.append(RepresenterModel(cfg.warp_kernel, point_evals(Q[s]),
                                          chol_solve(L, Q[s + 1] - Q[s]), cfg.r, jit))
        L, jit = _factor(cfg.readout_kernel, Q[-1], 1.0 / cfg.lam)
        f = RepresenterModel(cfg.readout_kernel, point_evals(Q[-1]), chol_solve(L, self.Y), 1.0 / cfg.lam, jit)
        return warps, f


def deep_warp(X, Y, cfg: WarpConfig | None = None) -> WarpResult:
    """Minimise the trajectory objective starting from the identity trajectory.

    The warp models satisfy ``v_s(q^s) = (q^{s+1} - q^s) - r beta_s`` with
    ``beta_s`` their coefficients; the readout is a nugget regression of
    ``Y`` on the last layer.
    """
    cfg = cfg or WarpConfig()
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.ndim != 2 or len(X) != len(Y):
        raise InputError("inputs and outputs must be 2-D arrays with matching rows")
    obj = TrajectoryObjective(X, Y, cfg)
    x0 = np.tile(X.ravel(), cfg.depth)
    trace = [obj.value(x0)]
    res = optimize.minimize(obj.value_grad, x0, jac=True, method="BFGS",
                            callback=lambda x: trace.append(obj.value(x)),
                            options={"gtol": cfg.gtol * max(1.0, abs(trace[0])), "maxiter": cfg.max_iter})
    warps, f = obj.models(res.x)
    return WarpResult(warps, f, obj.layers(res.x), trace, _status(res, cfg.max_iter))


def _status(res, max_iter: int) -> str:
    if res.success:
        return "converged"
    if res.nit >= max_iter:
        return "max_iter"
    return "precision_limit"


def two_moons(n: int = 40, noise: float = 0.05, seed: int = 0):
    """``(X, y)`` with two interleaved half circles labelled ``+1`` and ``-1``."""
    rng = np.random.default_rng(seed)
    h = n // 2
    th = rng.uniform(0.0, np.pi, n)
    X = np.empty((n, 2))
    X[:h] = np.c_[np.cos(th[:h]), np.sin(th[:h])]
    X[h:] = np.c_[1.0 - np.cos(th[h:]), 0.5 - np.sin(th[h:])]
    X += noise * rng.standard_normal(X.shape)
    y = np.r_[np.ones(h), -np.ones(n - h)]
    return X, y
