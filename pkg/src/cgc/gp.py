"""Representer-theorem primitives.

Interpolation, nugget regression, the optimal quadratic form and
prediction, all expressed over arbitrary linear-functional anchors.
Every solve goes through a Cholesky factor; no inverse is ever formed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg

from .errors import InputError
from .kernels import (
    Kernel,
    LinearFunctional,
    PointEval,
    chol_jitter,
    chol_solve,
    cross,
    gram,
    op_block,
    parse_kernel,
)


@dataclass
class RepresenterModel:
    """``f(.) = sum_i coeffs[i] * K(., anchors[i])``.

    ``coeffs`` may be two-dimensional (one column per output component) for
    vector-valued functions with a separable kernel.
    """

    kernel: Kernel
    anchors: list[LinearFunctional]
    coeffs: np.ndarray
    nugget: float = 0.0
    jitter: float = 0.0

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape[0] != len(self.anchors):
            raise InputError("coefficient count does not match anchor count")
        if not np.all(np.isfinite(self.coeffs)):
            raise InputError("non-finite coefficients")

    @property
    def input_dim(self) -> int:
        return self.anchors[0].dim if self.anchors else 0

    def __call__(self, X, op=("value", 0)) -> np.ndarray:
        """Vectorised prediction of functional family ``op`` at the points ``X``."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None] if self.input_dim == 1 else X[None, :]
        if not self.anchors:
            shape = (X.shape[0],) + self.coeffs.shape[1:]
            return np.zeros(shape)
        return self._cross_points(op, X) @ self.coeffs

    def _cross_points(self, op, X) -> np.ndarray:
        out = np.zeros((X.shape[0], len(self.anchors)))
        groups: dict = {}
        for i, f in enumerate(self.anchors):
            groups.setdefault((f.kind, f.axis), []).append(i)
        for key, idx in groups.items():
            pts = np.array([self.anchors[i].x for i in idx])
            out[:, idx] = op_block(self.kernel, op, X, key, pts)
        return out

    def to_json(self) -> dict:
        return {
            "kernel": self.kernel.text,
            "anchors": [f.to_json() for f in self.anchors],
            "coeffs": self.coeffs.tolist(),
            "nugget": self.nugget if math.isfinite(self.nugget) else "inf",
        }

    @classmethod
    def from_json(cls, d: dict) -> "RepresenterModel":
        nug = d.get("nugget", 0.0)
        return cls(
            parse_kernel(d["kernel"]),
            [LinearFunctional.from_json(a) for a in d["anchors"]],
            np.asarray(d["coeffs"], dtype=float),
            float(nug),
        )


def _check(fs, y):
    y = np.asarray(y, dtype=float)
    if len(fs) != y.shape[0]:
        raise InputError("number of functionals and values differ")
    return y


def _nugget_from_lambda(lam: float) -> float:
    if not lam > 0:
        raise InputError("lambda must be positive")
    return 0.0 if math.isinf(lam) else 1.0 / lam


def _factor(k, fs, nugget):
    G = gram(k, fs).entries
    if nugget:
        G = G + nugget * np.eye(len(fs))
    return chol_jitter(G)


def interpolate(k: Kernel, fs: Sequence[LinearFunctional], y) -> RepresenterModel:
    """Minimum-norm element of the RKHS with ``fs[i](f) = y[i]``."""
    y = _check(fs, y)
    if not len(fs):
        raise InputError("interpolation needs at least one functional")
    L, jit = _factor(k, fs, 0.0)
    return RepresenterModel(k, list(fs), chol_solve(L, y), 0.0, jit)


def regress(k: Kernel, fs: Sequence[LinearFunctional], y, sigma2: float) -> RepresenterModel:
    """Kernel ridge / GP posterior mean with noise variance ``sigma2``."""
    y = _check(fs, y)
    if not sigma2 > 0:
        raise InputError("noise variance must be positive")
    L, jit = _factor(k, fs, sigma2)
    return RepresenterModel(k, list(fs), chol_solve(L, y), sigma2, jit)


def quad_form(k: Kernel, fs: Sequence[LinearFunctional], y, lam: float = math.inf) -> float:
    """``y^T (K(fs, fs) + lam^-1 I)^-1 y``; ``lam = inf`` means no nugget.

    This is the minimum over the RKHS of ``|f|^2 + lam |fs(f) - y|^2``.
    """
    y = _check(fs, y)
    if not len(fs):
        return 0.0
    L, _ = _factor(k, fs, _nugget_from_lambda(lam))
    w = linalg.solve_triangular(L, y, lower=True, check_finite=False)
    return float(np.sum(w * w))


def predict(m: RepresenterModel, phi: LinearFunctional):
    row = cross(m.kernel, [phi], m.anchors)[0]
    out = row @ m.coeffs
    return float(out) if np.ndim(out) == 0 else out


def predict_many(m: RepresenterModel, phis: Sequence[LinearFunctional]) -> np.ndarray:
    return cross(m.kernel, list(phis), m.anchors) @ m.coeffs


def rkhs_norm_sq(m: RepresenterModel) -> float:
    if not m.anchors:
        return 0.0
    G = gram(m.kernel, m.anchors).entries
    c = m.coeffs if m.coeffs.ndim == 2 else m.coeffs[:, None]
    return float(np.sum(c * (G @ c)))


def point_evals(X) -> list[LinearFunctional]:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return [PointEval(x) for x in X]
