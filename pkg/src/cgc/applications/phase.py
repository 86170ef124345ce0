"""Local amplitude and phase correction of an oscillatory mode.

Near a time ``tau`` the signal is modelled as
``X_c cos(theta_e(t)) + X_s sin(theta_e(t))`` plus white noise, with
standard normal priors on ``X_c`` and ``X_s`` and a Gaussian window whose
width follows the local frequency ``theta_e'(tau)``. The amplitude is
``|X|`` and the phase correction is ``atan2(-X_s, X_c)``; feeding the
correction back into ``theta_e`` closes the loop.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.interpolate import CubicSpline

from ..errors import DegenerateWindow, InputError


def _derivative(theta, tau, h=1e-6):
    return (theta(tau + h) - theta(tau - h)) / (2.0 * h)


def phase_refine(t, f, theta_e, tau, alpha: float = 20.0, noise: float = 1e-3):
    """``(a, dtheta)`` at each time in ``tau`` for the estimated phase ``theta_e``.

    ``theta_e`` is a callable; its derivative is taken by central
    differences. Raises ``DegenerateWindow`` when the window weights sum to
    less than three samples at some ``tau``.
    """
    t = np.asarray(t, dtype=float).ravel()
    f = np.asarray(f, dtype=float).ravel()
    if t.size != f.size:
        raise InputError("time grid and signal differ in length")
    if not (alpha > 0 and noise > 0):
        raise InputError("alpha and noise must be positive")
    taus = np.atleast_1d(np.asarray(tau, dtype=float))
    th = theta_e(t)
    cos, sin = np.cos(th), np.sin(th)
    rate = _derivative(theta_e, taus)
    W = np.exp(-((rate[:, None] * (t[None, :] - taus[:, None])) / alpha) ** 2)
    mass = W.sum(axis=1)
    if np.any(mass < 3.0):
        bad = taus[np.argmin(mass)]
        raise DegenerateWindow(f"window at tau={bad:.6g} covers fewer than 3 samples")
    w2 = W * W / noise
    # normal equations of the 2x2 weighted ridge problem, one per tau
    acc = w2 @ (cos * cos) + 1.0
    acs = w2 @ (cos * sin)
    ass = w2 @ (sin * sin) + 1.0
    bc = w2 @ (cos * f)
    bs = w2 @ (sin * f)
    det = acc * ass - acs * acs
    Xc = (ass * bc - acs * bs) / det
    Xs = (acc * bs - acs * bc) / det
    a = np.hypot(Xc, Xs)
    dtheta = np.arctan2(-Xs, Xc)
    if np.ndim(tau) == 0:
        return float(a[0]), float(dtheta[0])
    return a, dtheta


@dataclass
class PhaseIteration:
    theta: np.ndarray
    amplitude: np.ndarray
    corrections: list[float] = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.corrections)


class _Cap(Exception):
    pass


def iterate_phase(t, f, theta0, alpha: float = 5.0, noise: float = 1e-3, tol: float = 1e-4,
                  max_iter: int = 20, accelerate: bool = True, memory: int = 10) -> PhaseIteration:
    """Drive the correction ``dtheta(theta_e)`` to zero on every grid point.

    ``theta0`` holds the initial phase values on ``t``; between grid points
    the phase is a cubic spline. The plain cycle applies
    ``theta_e <- theta_e + dtheta``. Its contraction is slow for error
    components the window averages out, so by default the same update is
    Anderson-mixed over the last ``memory`` corrections. ``max_iter`` caps
    the number of correction passes; iteration stops once
    ``max |dtheta| <= tol``.
    """
    t = np.asarray(t, dtype=float).ravel()
    theta0 = np.asarray(theta0, dtype=float).ravel()
    if theta0.size != t.size:
        raise InputError("initial phase must be given on the time grid")
    out = PhaseIteration(theta0.copy(), np.ones_like(t))

    def correction(theta):
        if out.iterations >= max_iter:
            raise _Cap
        a, d = phase_refine(t, f, CubicSpline(t, theta), t, alpha, noise)
        step = float(np.max(np.abs(d)))
        out.corrections.append(step)
        out.theta, out.amplitude = np.array(theta, dtype=float), a
        if step <= tol:
            out.converged = True
        return d

    if accelerate:
        try:
            optimize.anderson(correction, theta0, M=memory, alpha=1.0, f_tol=tol,
                              maxiter=max_iter, line_search=None)
        except (_Cap, optimize.NoConvergence):
            pass
        return out
    theta = theta0.copy()
    while not out.converged:
        try:
            theta = theta + correction(theta)
        except _Cap:
            break
    return out
