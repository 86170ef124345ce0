"""Dimension reduction as two-function completion problems.

Data ``x`` feeds a latent node ``z`` through an unknown encoder ``g`` and
``z`` feeds an output node through an unknown decoder ``f``. Both edges are
relaxed: the encoder nugget is ``sigma1^2`` and the decoder nugget is
``sigma2^2``. With the outputs observed exactly the completion objective
reduces to a function of the latent values ``Z`` alone,
``Z^T (G(X, X) + sigma1^2 I)^-1 Z + Y^T (K(Z, Z) + sigma2^2 I)^-1 Y``,
which is minimised over ``Z`` by BFGS with an analytic gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import optimize

from ..errors import InputError
from ..gp import RepresenterModel, point_evals
from ..graph_model import Edge, Graph, Node, SampleSet, Unknown
from ..kernels import Gaussian, Kernel, LinearBias, Product, Scale, Sum, chol_jitter, chol_solve, op_block
from ..solver import INF, CgcProblem, RelaxationConfig
from .warp import WarpConfig, WarpResult, _status, deep_warp


@dataclass
class DimRedConfig:
    """Latent dimension, encoder kernel, decoder kernel and the two noise levels."""

    latent_dim: int
    encoder: Kernel = field(default_factory=lambda: LinearBias(0.0))
    decoder: Kernel = field(default_factory=lambda: LinearBias(0.0))
    sigma1: float = 1e-3
    sigma2: float = 1e-3
    seed: int = 0
    max_iter: int = 2000
    gtol: float = 1e-10

    def __post_init__(self):
        if self.latent_dim < 1:
            raise InputError("latent dimension must be at least 1")
        if not (self.sigma1 > 0 and self.sigma2 > 0):
            raise InputError("noise levels must be positive")


@dataclass
class DimRedResult:
    encoder: RepresenterModel
    decoder: RepresenterModel
    latents: np.ndarray
    objective: float
    objective_trace: list[float]
    termination: str

    def reconstruct(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return self.decoder(self.encoder(X))


def reduction_problem(X, Y, cfg: DimRedConfig) -> CgcProblem:
    """Graph ``x -g-> z -f-> y`` with ``x`` and ``y`` observed exactly."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim != 2 or Y.ndim != 2 or len(X) != len(Y):
        raise InputError("inputs and outputs must be 2-D arrays with matching rows")
    nodes = (Node("x", dim=X.shape[1]), Node("z", dim=cfg.latent_dim), Node("y", dim=Y.shape[1]))
    edges = (Edge("g", "x", "z", Unknown("g")), Edge("f", "z", "y", Unknown("f")))
    g = Graph(nodes, edges)
    data = SampleSet.from_columns(g, {"x": X, "y": Y}, {"x": np.ones(len(X), bool), "y": np.ones(len(X), bool)})
    relax = RelaxationConfig(
        {"g": 1.0 / cfg.sigma1 ** 2, "f": 1.0 / cfg.sigma2 ** 2},
        {"z": INF, "y": INF},
        {"x": INF, "y": INF},
    )
    return CgcProblem(g, {"g": cfg.encoder, "f": cfg.decoder}, data, relax)


def _rotation_invariant(k: Kernel) -> bool:
    if isinstance(k, (Gaussian, LinearBias)):
        return True
    if isinstance(k, Scale):
        return _rotation_invariant(k.inner)
    if isinstance(k, Sum):
        return all(_rotation_invariant(p) for p in k.parts)
    if isinstance(k, Product):
        return _rotation_invariant(k.left) and _rotation_invariant(k.right)
    return False


def _principal_axes(Z: np.ndarray) -> np.ndarray:
    """Rotation of latent space onto the principal axes of ``Z`` with fixed signs."""
    _, _, Vt = np.linalg.svd(Z, full_matrices=False)
    V = Vt.T
    for j in range(V.shape[1]):
        i = np.argmax(np.abs(V[:, j]))
        if V[i, j] < 0:
            V[:, j] = -V[:, j]
    return V


class ReducedObjective:
    """``J(Z) = tr Z^T A^-1 Z + tr Y^T (K(Z, Z) + sigma2^2 I)^-1 Y`` with ``A = G(X, X) + sigma1^2 I``.

    ``A`` is factored once; the decoder Gram is refactored at every ``Z``.
    """

    def __init__(self, X, Y, cfg: DimRedConfig):
        self.X = np.asarray(X, dtype=float)
        self.Y = np.asarray(Y, dtype=float)
        self.cfg = cfg
        self.n, self.k = len(self.X), cfg.latent_dim
        A = cfg.encoder(self.X, self.X)
        A[np.diag_indices_from(A)] += cfg.sigma1 ** 2
        self.LA, self.jitA = chol_jitter(0.5 * (A + A.T))

    def _decoder_factor(self, Z):
        K = self.cfg.decoder(Z, Z)
        K[np.diag_indices_from(K)] += self.cfg.sigma2 ** 2
        return chol_jitter(0.5 * (K + K.T))

    def value_grad(self, z):
        Z = z.reshape(self.n, self.k)
        AZ = chol_solve(self.LA, Z)
        LK, _ = self._decoder_factor(Z)
        alpha = chol_solve(LK, self.Y)
        J = float(np.sum(Z * AZ) + np.sum(self.Y * alpha))
        # d/dZ of tr Y^T K^-1 Y is -2 sum_j (alpha alpha^T)_ij dK(z_i, z_j)/dz_i
        W = alpha @ alpha.T
        G = 2.0 * AZ
        for a in range(self.k):
            dK = op_block(self.cfg.decoder, ("value", 0), Z, ("value", 0), Z, shift_axis=a)
            G[:, a] -= 2.0 * np.sum(W * dK, axis=1)
        return J, G.ravel()

    def value(self, Z) -> float:
        return self.value_grad(np.asarray(Z, dtype=float).ravel())[0]

    def gradient(self, Z) -> np.ndarray:
        return self.value_grad(np.asarray(Z, dtype=float).ravel())[1]

    def models(self, Z):
        cfg = self.cfg
        enc = RepresenterModel(cfg.encoder, point_evals(self.X), chol_solve(self.LA, Z),
                               cfg.sigma1 ** 2, self.jitA)
        LK, jit = self._decoder_factor(Z)
        dec = RepresenterModel(cfg.decoder, point_evals(Z), chol_solve(LK, self.Y), cfg.sigma2 ** 2, jit)
        return enc, dec


def _initial_latents(X, cfg: DimRedConfig, init):
    if isinstance(init, np.ndarray):
        Z0 = np.asarray(init, dtype=float)
        if Z0.shape != (len(X), cfg.latent_dim):
            raise InputError("initial latents have the wrong shape")
        return Z0
    Xc = X - X.mean(axis=0)
    if init == "pca":
        U, s, _ = np.linalg.svd(Xc, full_matrices=False)
        return U[:, :cfg.latent_dim] * s[:cfg.latent_dim]
    if init == "random":
        rng = np.random.default_rng(cfg.seed)
        return Xc @ rng.standard_normal((X.shape[1], cfg.latent_dim)) / np.sqrt(X.shape[1])
    raise InputError(f"unknown latent initialisation {init!r}")


def _continuation(cfg: DimRedConfig, start: float = 1.0, factor: float = 10.0):
    """Noise-level schedule that shrinks by ``factor`` per stage down to the configured levels.

    Levels already above ``start`` stay fixed throughout.
    """
    low = min(cfg.sigma1, cfg.sigma2)
    n = max(0, int(np.ceil(np.log(start / low) / np.log(factor) - 1e-12)))
    out = []
    for i in range(n, -1, -1):
        f = factor ** i
        out.append((min(cfg.sigma1 * f, max(start, cfg.sigma1)), min(cfg.sigma2 * f, max(start, cfg.sigma2))))
    return out


def _reduce(X, Y, cfg: DimRedConfig, init="random") -> DimRedResult:
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if Y.ndim == 1:
        Y = Y[:, None]
    if len(X) != len(Y):
        raise InputError("inputs and outputs must have matching rows")
    Z = _initial_latents(X, cfg, init)
    trace: list[float] = []
    # small noise levels are badly conditioned; walk down from a well-conditioned level
    stages = _continuation(cfg)
    for k, (s1, s2) in enumerate(stages):
        stage_cfg = replace(cfg, sigma1=s1, sigma2=s2)
        red = ReducedObjective(X, Y, stage_cfg)
        last = k == len(stages) - 1
        res = optimize.minimize(red.value_grad, Z.ravel(), jac=True, method="BFGS",
                                callback=(lambda z: trace.append(red.value(z))) if last else None,
                                options={"gtol": cfg.gtol * max(1.0, abs(red.value(Z))), "maxiter": cfg.max_iter})
        if last:
            trace.insert(0, red.value(Z))
        Z = res.x.reshape(len(X), cfg.latent_dim)
    if cfg.latent_dim > 1 and _rotation_invariant(cfg.decoder):
        Z = Z @ _principal_axes(Z)
    enc, dec = red.models(Z)
    return DimRedResult(enc, dec, Z, red.value(Z), trace, _status(res, cfg.max_iter))


def autoencode(X, cfg: DimRedConfig, init="random") -> DimRedResult:
    """Encoder, decoder and latent values reconstructing ``X`` through ``cfg.latent_dim``.

    ``init`` is ``"random"`` (seeded projection), ``"pca"`` or an array of
    initial latents. For rotation-invariant decoder kernels the latents are
    returned in their principal axes with fixed signs.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or cfg.latent_dim >= X.shape[1]:
        raise InputError("latent dimension must be smaller than the data dimension")
    return _reduce(X, X, cfg, init)


def kernel_pca(X, feature_map: Callable[[np.ndarray], np.ndarray], latent_dim: int,
               sigma1: float = 1e-3, sigma2: float = 1e-3, seed: int = 0) -> DimRedResult:
    """Linear autoencoder on the features ``feature_map(X)``."""
    F = np.asarray(feature_map(np.asarray(X, dtype=float)), dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    cfg = DimRedConfig(latent_dim, LinearBias(0.0), LinearBias(0.0), sigma1, sigma2, seed)
    return autoencode(F, cfg)


def active_subspace(F: Callable[[np.ndarray], np.ndarray], X, cfg: DimRedConfig, init="random") -> DimRedResult:
    """Approximate ``F`` by ``f o g`` through a ``cfg.latent_dim`` bottleneck."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    Y = np.asarray(F(X), dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if len(Y) != len(X):
        raise InputError("F must return one output row per input row")
    return _reduce(X, Y, cfg, init)


def nonlinear_pca(X, latent_dim: int, warp: WarpConfig | None = None,
                  sigma1: float = 1e-3, sigma2: float = 1e-3, seed: int = 0):
    """Warp the data towards itself, then run a linear autoencoder on the warped points.

    The readout of the warp regresses ``X`` on the last layer. Returns the
    warp result and the autoencoder result on ``q^{L+1}``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or latent_dim >= X.shape[1]:
        raise InputError("latent dimension must be smaller than the data dimension")
    w = deep_warp(X, X, warp)
    cfg = DimRedConfig(latent_dim, LinearBias(0.0), LinearBias(0.0), sigma1, sigma2, seed)
    return w, autoencode(w.trajectory[-1], cfg)
