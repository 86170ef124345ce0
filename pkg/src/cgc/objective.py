"""Interface between objectives and the Gauss-Newton optimizer."""

from __future__ import annotations

from typing import Callable

import numpy as np


class Objective:
    """A smooth objective over a flat vector with a Gauss-Newton curvature.

    Subclasses provide ``value`` and either ``gauss_newton`` (value, gradient
    and a positive semi-definite curvature matrix) or its square-root form
    ``gn_factor``. Objectives with equality
    constraints also implement ``constraints`` and report
    ``has_constraints = True``.
    """

    n: int = 0
    has_constraints = False

    def value(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self.gn_factor(x)[1]

    def gauss_newton(self, x: np.ndarray):
        """``(F, g, H)`` with ``H = 2 J^T J`` built from :meth:`gn_factor`."""
        F, g, J, _ = self.gn_factor(x)
        return F, g, 2.0 * (J.T @ J)

    def gn_factor(self, x: np.ndarray):
        """``(F, g, J, r)`` with exact gradient ``g`` and curvature ``2 J^T J``.

        ``r`` is a whitened residual with ``F = |r|^2`` and ``g = 2 J^T r``
        wherever the curvature is exact. Subclasses override this or
        :meth:`gauss_newton`; the default factors the latter.
        """
        F, g, H = self.gauss_newton(x)
        s, V = np.linalg.eigh(0.5 * (H + H.T) / 2.0)
        keep = s > 1e-14 * max(s.max(initial=0.0), 1e-300)
        root = np.sqrt(s[keep])
        J = root[:, None] * V[:, keep].T
        r = (V[:, keep].T @ (0.5 * g)) / root
        return F, g, J, r

    def constraints(self, x: np.ndarray):
        return np.zeros(0), np.zeros((0, self.n))

    def pack(self, state) -> np.ndarray:
        return np.asarray(state, dtype=float).ravel().copy()

    def unpack(self, x: np.ndarray):
        return np.asarray(x, dtype=float).copy()

    def perturbation_scale(self) -> float:
        return 1.0

    def __call__(self, state) -> float:
        x = state if isinstance(state, np.ndarray) else self.pack(state)
        return self.value(x)

    def project(self, x: np.ndarray, tol: float = 1e-12, max_iter: int = 50) -> np.ndarray:
        """Newton projection onto ``c(x) = 0`` with minimum-norm corrections."""
        if not self.has_constraints:
            return x
        x = np.array(x, dtype=float)
        for _ in range(max_iter):
            c, C = self.constraints(x)
            if c.size == 0 or np.max(np.abs(c)) <= tol * (1.0 + np.max(np.abs(x), initial=0.0)):
                break
            dx, *_ = np.linalg.lstsq(C, -c, rcond=None)
            x = x + dx
        return x


class LeastSquares(Objective):
    """``|r(x)|^2`` for a residual map with a Jacobian (finite differences if absent)."""

    def __init__(self, residual: Callable[[np.ndarray], np.ndarray], n: int,
                 jacobian: Callable[[np.ndarray], np.ndarray] | None = None):
        self.residual = residual
        self.jacobian = jacobian
        self.n = n

    def value(self, x):
        r = self.residual(x)
        return float(r @ r)

    def _jac(self, x):
        if self.jacobian is not None:
            return np.atleast_2d(self.jacobian(x))
        r0 = self.residual(x)
        J = np.empty((r0.size, x.size))
        for i in range(x.size):
            h = 1e-7 * (1.0 + abs(x[i]))
            xp, xm = x.copy(), x.copy()
            xp[i] += h
            xm[i] -= h
            J[:, i] = (self.residual(xp) - self.residual(xm)) / (2 * h)
        return J

    def gn_factor(self, x):
        r = self.residual(x)
        J = self._jac(x)
        return float(r @ r), 2.0 * J.T @ r, J, r
