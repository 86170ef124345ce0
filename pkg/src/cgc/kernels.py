"""Kernel algebra, linear functionals and Gram assembly.

Every kernel exposes ``block(X, Y, a, b)``, the matrix of mixed partial
derivatives

    B[i, j] = d^a/ds^a d^b/dt^b k(s, t) evaluated at s = X[i], t = Y[j]

where ``a`` and ``b`` are multi-indices (one derivative order per input
axis). Linear functionals (point evaluation, partial derivatives and the
Laplacian) are finite linear combinations of such derivatives, so a single
primitive covers every pairing ``[phi, K psi]`` needed by the solvers.

The Gaussian kernel has closed-form derivatives of any order through
Hermite polynomials. The linear kernel is a polynomial of degree one in each
argument and is differentiated exactly. The remaining variants are
differentiated with nested central finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product as iproduct
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.polynomial import hermite
from scipy import linalg

from ._syntax import Call, fmt_number, parse_call_text
from .errors import InputError, NotPositiveDefinite, ParseError, UnsupportedFunctional

Multi = tuple[int, ...]

_FD_REL = 1e-4
_PHASES: dict[str, Callable[[np.ndarray], np.ndarray]] = {}


def register_phase(name: str, fn: Callable[[np.ndarray], np.ndarray]) -> None:
    """Register a named phase map usable by :class:`TrigWindow`."""
    _PHASES[name] = fn


def phase_map(name: str) -> Callable[[np.ndarray], np.ndarray]:
    try:
        return _PHASES[name]
    except KeyError:
        raise InputError(f"unknown phase map {name!r}; register it first") from None


def _as_points(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        X = X[:, None]
    return X


def _zero(d: int) -> Multi:
    return (0,) * d


def _unit(d: int, axis: int, order: int = 1) -> Multi:
    m = [0] * d
    m[axis] = order
    return tuple(m)


# --------------------------------------------------------------------------
# kernels


class Kernel:
    """Base class. Subclasses implement ``block`` (or ``_value`` for FD kernels)."""

    input_dim: int | None = None

    def block(self, X: np.ndarray, Y: np.ndarray, a: Multi, b: Multi) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, X, Y) -> np.ndarray:
        X, Y = _as_points(X), _as_points(Y)
        d = X.shape[1]
        return self.block(X, Y, _zero(d), _zero(d))

    @property
    def text(self) -> str:
        raise NotImplementedError

    def __str__(self) -> str:
        return self.text


@dataclass(frozen=True)
class Gaussian(Kernel):
    """``exp(-|s - t|^2 / ls^2)``."""

    ls: float = 1.0

    def __post_init__(self):
        if not self.ls > 0:
            raise InputError("Gaussian lengthscale must be positive")

    def block(self, X, Y, a, b):
        U = (X[:, None, :] - Y[None, :, :]) / self.ls
        out = np.exp(-np.sum(U * U, axis=-1))
        for k in range(X.shape[1]):
            n = a[k] + b[k]
            if n == 0:
                continue
            coef = np.zeros(n + 1)
            coef[n] = 1.0
            # d^n/dr^n exp(-r^2/ls^2) = (-1/ls)^n H_n(r/ls) exp(-r^2/ls^2); d/dt = -d/dr
            sign = (-1.0) ** b[k] * (-1.0 / self.ls) ** n
            out = out * (sign * hermite.hermval(U[..., k], coef))
        return out

    @property
    def text(self):
        return f"gaussian(ls={fmt_number(self.ls)})"


@dataclass(frozen=True)
class LinearBias(Kernel):
    """``c + s . t``; exact derivatives (degree one in each argument)."""

    bias: float = 0.0

    def __post_init__(self):
        if not self.bias >= 0:
            raise InputError("linear kernel bias must be non-negative")

    def block(self, X, Y, a, b):
        sa, sb = sum(a), sum(b)
        n, m = X.shape[0], Y.shape[0]
        if sa > 1 or sb > 1:
            return np.zeros((n, m))
        if sa == 0 and sb == 0:
            return self.bias + X @ Y.T
        if sa == 1 and sb == 0:
            i = a.index(1)
            return np.broadcast_to(Y[:, i][None, :], (n, m)).copy()
        if sa == 0 and sb == 1:
            j = b.index(1)
            return np.broadcast_to(X[:, j][:, None], (n, m)).copy()
        return np.full((n, m), 1.0 if a == b else 0.0)

    @property
    def text(self):
        return f"linear(bias={fmt_number(self.bias)})"


class _FDKernel(Kernel):
    """Kernels differentiated by nested central finite differences."""

    differentiable = True

    def _value(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def block(self, X, Y, a, b):
        if not any(a) and not any(b):
            return self._value(X, Y)
        if not self.differentiable:
            raise UnsupportedFunctional(f"{self.text} does not support derivative functionals")
        for i, order in enumerate(a):
            if order:
                h = _FD_REL * (1.0 + np.abs(X[:, i]))
                Xp, Xm = X.copy(), X.copy()
                Xp[:, i] += h
                Xm[:, i] -= h
                a1 = _unit(len(a), i, -1)
                a1 = tuple(p + q for p, q in zip(a, a1))
                diff = self.block(Xp, Y, a1, b) - self.block(Xm, Y, a1, b)
                return diff / (2.0 * h)[:, None]
        for j, order in enumerate(b):
            if order:
                h = _FD_REL * (1.0 + np.abs(Y[:, j]))
                Yp, Ym = Y.copy(), Y.copy()
                Yp[:, j] += h
                Ym[:, j] -= h
                b1 = tuple(q - (1 if k == j else 0) for k, q in enumerate(b))
                diff = self.block(X, Yp, a, b1) - self.block(X, Ym, a, b1)
                return diff / (2.0 * h)[None, :]
        raise AssertionError("unreachable")


@dataclass(frozen=True)
class WhiteNoise(_FDKernel):
    """``var * [s == t]``: a Kronecker delta on the sample points."""

    var: float = 1.0
    differentiable = False

    def __post_init__(self):
        if not self.var > 0:
            raise InputError("white-noise variance must be positive")

    def _value(self, X, Y):
        same = np.all(X[:, None, :] == Y[None, :, :], axis=-1)
        return self.var * same.astype(float)

    @property
    def text(self):
        return f"white(var={fmt_number(self.var)})"


@dataclass(frozen=True)
class TrigWindow(_FDKernel):
    """``exp(-(s-t)^2/ls^2) (cos th(s) cos th(t) + sin th(s) sin th(t))``.

    ``phase`` names a map registered with :func:`register_phase`.
    """

    ls: float
    phase: str
    input_dim = 1

    def __post_init__(self):
        if not self.ls > 0:
            raise InputError("trigwindow lengthscale must be positive")

    def _value(self, X, Y):
        th = phase_map(self.phase)
        s, t = X[:, 0], Y[:, 0]
        ts, tt = th(s), th(t)
        window = np.exp(-((s[:, None] - t[None, :]) / self.ls) ** 2)
        osc = np.cos(ts)[:, None] * np.cos(tt)[None, :] + np.sin(ts)[:, None] * np.sin(tt)[None, :]
        return window * osc

    @property
    def text(self):
        return f"trigwindow(ls={fmt_number(self.ls)}, phase={self.phase})"


def gabor(tau: float, omega: float, alpha: float, t):
    """Cosine and sine Gabor wavelets centred at ``tau`` with frequency ``omega``.

    Returns ``(chi_c, chi_s)`` with the common amplitude
    ``(2/pi)^(1/4) sqrt(omega/alpha)`` and envelope
    ``exp(-omega^2 (t - tau)^2 / alpha^2)``.
    """
    if not (omega > 0 and alpha > 0):
        raise InputError("gabor requires omega > 0 and alpha > 0")
    t = np.asarray(t, dtype=float)
    r = t - tau
    amp = (2.0 / math.pi) ** 0.25 * math.sqrt(omega / alpha)
    env = amp * np.exp(-(omega * r / alpha) ** 2)
    return env * np.cos(omega * r), env * np.sin(omega * r)


@dataclass(frozen=True)
class GaborAtom(_FDKernel):
    """``chi_c(s) chi_c(t) + chi_s(s) chi_s(t)`` for one (tau, omega) pair."""

    tau: float
    omega: float
    alpha: float = 20.0
    input_dim = 1

    def __post_init__(self):
        if not (self.omega > 0 and self.alpha > 0):
            raise InputError("gabor kernel requires omega > 0 and alpha > 0")

    def _value(self, X, Y):
        cs, ss = gabor(self.tau, self.omega, self.alpha, X[:, 0])
        ct, st = gabor(self.tau, self.omega, self.alpha, Y[:, 0])
        return np.outer(cs, ct) + np.outer(ss, st)

    @property
    def text(self):
        return (
            f"gabor(tau={fmt_number(self.tau)}, omega={fmt_number(self.omega)}, "
            f"alpha={fmt_number(self.alpha)})"
        )


@dataclass(frozen=True)
class Sum(Kernel):
    parts: tuple[Kernel, ...]

    def __post_init__(self):
        if not self.parts:
            raise InputError("sum kernel needs at least one term")
        object.__setattr__(self, "parts", tuple(self.parts))

    def block(self, X, Y, a, b):
        out = self.parts[0].block(X, Y, a, b)
        for k in self.parts[1:]:
            out = out + k.block(X, Y, a, b)
        return out

    @property
    def text(self):
        return "sum(" + ", ".join(k.text for k in self.parts) + ")"


@dataclass(frozen=True)
class Product(Kernel):
    left: Kernel
    right: Kernel

    def block(self, X, Y, a, b):
        # Leibniz rule in both arguments
        out = 0.0
        for a1 in iproduct(*(range(n + 1) for n in a)):
            ca = math.prod(math.comb(n, k) for n, k in zip(a, a1))
            a2 = tuple(n - k for n, k in zip(a, a1))
            for b1 in iproduct(*(range(n + 1) for n in b)):
                cb = math.prod(math.comb(n, k) for n, k in zip(b, b1))
                b2 = tuple(n - k for n, k in zip(b, b1))
                out = out + ca * cb * self.left.block(X, Y, a1, b1) * self.right.block(X, Y, a2, b2)
        return out

    @property
    def text(self):
        return f"product({self.left.text}, {self.right.text})"


@dataclass(frozen=True)
class Scale(Kernel):
    factor: float
    inner: Kernel

    def __post_init__(self):
        if not self.factor > 0:
            raise InputError("kernel scale factor must be positive")

    def block(self, X, Y, a, b):
        return self.factor * self.inner.block(X, Y, a, b)

    @property
    def text(self):
        return f"scale({fmt_number(self.factor)}, {self.inner.text})"


KernelSpec = Kernel


# --------------------------------------------------------------------------
# textual form


def _num(call: Call, key: str, default=None) -> float:
    if key not in call.kwargs:
        if default is None:
            raise call.error(f"{call.name} needs {key}=")
        return default
    v = call.kwargs[key]
    if not isinstance(v, float):
        raise call.error(f"{call.name}: {key} must be a number")
    return v


def kernel_from_call(call) -> Kernel:
    if not isinstance(call, Call):
        raise ParseError("expected kernel expression", 0, 0, str(call))
    name = call.name
    try:
        if name == "gaussian":
            allowed = {"ls"}
            k = Gaussian(_num(call, "ls", 1.0))
        elif name == "linear":
            allowed = {"bias"}
            k = LinearBias(_num(call, "bias", 0.0))
        elif name == "white":
            allowed = {"var"}
            k = WhiteNoise(_num(call, "var", 1.0))
        elif name == "trigwindow":
            allowed = {"ls", "phase"}
            phase = call.kwargs.get("phase")
            if not isinstance(phase, Call) or phase.args or phase.kwargs:
                raise call.error("trigwindow needs phase=NAME")
            k = TrigWindow(_num(call, "ls"), phase.name)
        elif name == "gabor":
            allowed = {"tau", "omega", "alpha"}
            k = GaborAtom(_num(call, "tau"), _num(call, "omega"), _num(call, "alpha", 20.0))
        elif name == "sum":
            allowed = set()
            k = Sum(tuple(kernel_from_call(c) for c in call.args))
        elif name == "product":
            allowed = set()
            if len(call.args) != 2:
                raise call.error("product takes exactly two kernels")
            k = Product(kernel_from_call(call.args[0]), kernel_from_call(call.args[1]))
        elif name == "scale":
            allowed = set()
            if len(call.args) != 2 or not isinstance(call.args[0], float):
                raise call.error("scale takes a factor and a kernel")
            k = Scale(call.args[0], kernel_from_call(call.args[1]))
        else:
            raise call.error(f"unknown kernel {name!r}")
    except InputError as exc:
        if isinstance(exc, ParseError):
            raise
        raise call.error(str(exc)) from None
    extra = set(call.kwargs) - allowed
    if extra:
        raise call.error(f"{name}: unexpected argument {sorted(extra)[0]!r}")
    if name not in ("sum", "product", "scale") and call.args:
        raise call.error(f"{name} takes keyword arguments only")
    return k


def parse_kernel(text: str) -> Kernel:
    """Parse the canonical textual form, e.g. ``sum(gaussian(ls=1.0), linear(bias=1.0))``."""
    return kernel_from_call(parse_call_text(text))


# --------------------------------------------------------------------------
# linear functionals


@dataclass(frozen=True)
class LinearFunctional:
    """A point functional: value, first partial derivative, or Laplacian at ``x``."""

    kind: str
    x: tuple[float, ...]
    axis: int = 0

    def __post_init__(self):
        if self.kind not in ("value", "deriv", "laplacian"):
            raise InputError(f"unknown functional kind {self.kind!r}")
        x = tuple(float(v) for v in np.atleast_1d(np.asarray(self.x, dtype=float)))
        if not all(math.isfinite(v) for v in x):
            raise InputError("functional location must be finite")
        if self.kind == "deriv" and not 0 <= self.axis < len(x):
            raise InputError("derivative axis out of range")
        object.__setattr__(self, "x", x)
        if self.kind != "deriv":
            object.__setattr__(self, "axis", 0)

    @property
    def dim(self) -> int:
        return len(self.x)

    @property
    def variant(self) -> str:
        return {"value": "PointEval", "deriv": "PartialDeriv", "laplacian": "Laplacian"}[self.kind]

    def to_json(self) -> dict:
        out = {"variant": self.variant, "x": list(self.x)}
        if self.kind == "deriv":
            out["axis"] = self.axis
        return out

    @classmethod
    def from_json(cls, d: dict) -> "LinearFunctional":
        kind = {"PointEval": "value", "PartialDeriv": "deriv", "TimeDeriv": "deriv",
                "Laplacian": "laplacian"}[d["variant"]]
        return cls(kind, tuple(d["x"]), int(d.get("axis", 0)))


def PointEval(x) -> LinearFunctional:
    return LinearFunctional("value", x)


def PartialDeriv(x, axis: int) -> LinearFunctional:
    return LinearFunctional("deriv", x, axis)


def TimeDeriv(t) -> LinearFunctional:
    return LinearFunctional("deriv", t, 0)


def Laplacian(x) -> LinearFunctional:
    return LinearFunctional("laplacian", x)


Op = tuple[str, int]  # (kind, axis): a functional family applied at many points


def op_terms(op: Op, d: int) -> list[tuple[float, Multi]]:
    kind, axis = op
    if kind == "value":
        return [(1.0, _zero(d))]
    if kind == "deriv":
        return [(1.0, _unit(d, axis))]
    if kind == "laplacian":
        return [(1.0, _unit(d, i, 2)) for i in range(d)]
    raise InputError(f"unknown functional kind {kind!r}")


def _shift(terms, axis: int):
    return [(c, tuple(m + (1 if i == axis else 0) for i, m in enumerate(mi))) for c, mi in terms]


def op_block(k: Kernel, op_a: Op, Xa, op_b: Op, Xb, shift_axis: int | None = None) -> np.ndarray:
    """``[op_a(x), K op_b(y)]`` for all ``x`` in ``Xa``, ``y`` in ``Xb``.

    With ``shift_axis`` set, the result is differentiated with respect to the
    location of the first functional along that axis.
    """
    Xa, Xb = _as_points(Xa), _as_points(Xb)
    d = Xa.shape[1]
    if k.input_dim is not None and d != k.input_dim:
        raise InputError(f"{k.text} expects {k.input_dim}-dimensional inputs, got {d}")
    ta, tb = op_terms(op_a, d), op_terms(op_b, d)
    if shift_axis is not None:
        ta = _shift(ta, shift_axis)
    out = np.zeros((Xa.shape[0], Xb.shape[0]))
    for ca, ma in ta:
        for cb, mb in tb:
            out = out + (ca * cb) * k.block(Xa, Xb, ma, mb)
    return out


def _op_of(f: LinearFunctional) -> Op:
    return (f.kind, f.axis)


def k_eval(k: Kernel, phi: LinearFunctional, psi: LinearFunctional) -> float:
    """``[phi, K psi]``."""
    if phi.dim != psi.dim:
        raise InputError("functionals act on different input dimensions")
    return float(op_block(k, _op_of(phi), [phi.x], _op_of(psi), [psi.x])[0, 0])


def _grouped(fs: Sequence[LinearFunctional]):
    groups: dict[Op, list[int]] = {}
    for i, f in enumerate(fs):
        groups.setdefault(_op_of(f), []).append(i)
    return [(op, np.array(idx), np.array([fs[i].x for i in idx])) for op, idx in groups.items()]


def cross(k: Kernel, fs: Sequence[LinearFunctional], gs: Sequence[LinearFunctional]) -> np.ndarray:
    """Matrix ``[fs[i], K gs[j]]``."""
    out = np.zeros((len(fs), len(gs)))
    if not fs or not gs:
        return out
    if len({f.dim for f in fs} | {g.dim for g in gs}) != 1:
        raise InputError("functionals act on different input dimensions")
    for op_a, ia, Xa in _grouped(fs):
        for op_b, ib, Xb in _grouped(gs):
            out[np.ix_(ia, ib)] = op_block(k, op_a, Xa, op_b, Xb)
    return out


@dataclass
class GramMatrix:
    entries: np.ndarray
    jitter_used: float = 0.0

    @property
    def n(self) -> int:
        return self.entries.shape[0]


def gram(k: Kernel, fs: Sequence[LinearFunctional]) -> GramMatrix:
    G = cross(k, fs, fs)
    return GramMatrix(0.5 * (G + G.T))


# --------------------------------------------------------------------------
# factorization

JITTER_START = 1e-10
JITTER_STOP = 1e-6


def chol_jitter(g) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor with the smallest jitter from a fixed ladder.

    Tries no jitter, then ``1e-10 * mean(diag)`` growing by factors of ten up
    to ``1e-6 * mean(diag)``. Returns ``(L, jitter)`` with
    ``L @ L.T == A + jitter * I``.
    """
    A = g.entries if isinstance(g, GramMatrix) else np.asarray(g, dtype=float)
    n = A.shape[0]
    if n == 0:
        return np.zeros((0, 0)), 0.0
    if not np.all(np.isfinite(A)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    scale = float(np.mean(np.diag(A)))
    if not scale > 0:
        scale = 1.0
    ladder = [0.0]
    j = JITTER_START
    while j <= JITTER_STOP * (1 + 1e-9):
        ladder.append(j * scale)
        j *= 10.0
    eye = np.eye(n)
    for jitter in ladder:
        try:
            L = linalg.cholesky(A + jitter * eye if jitter else A, lower=True, check_finite=False)
        except linalg.LinAlgError:
            continue
        if np.all(np.isfinite(L)) and np.all(np.diag(L) > 0):
            if isinstance(g, GramMatrix):
                g.jitter_used = jitter
            return L, jitter
    raise NotPositiveDefinite(f"Cholesky failed up to jitter {ladder[-1]:.3g}")


def chol_solve(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    return linalg.cho_solve((L, True), b, check_finite=False)


def tags_to_ops(tags: Iterable[str], d: int) -> list[Op]:
    """Expand edge functional tags (value, dt, grad, laplacian) to functional families."""
    ops: list[Op] = []
    for tag in tags:
        if tag == "value":
            ops.append(("value", 0))
        elif tag == "dt":
            ops.append(("deriv", 0))
        elif tag == "grad":
            ops.extend(("deriv", i) for i in range(d))
        elif tag == "laplacian":
            ops.append(("laplacian", 0))
        else:
            raise InputError(f"unknown functional tag {tag!r}")
    return ops


FUNCTIONAL_TAGS = ("value", "dt", "grad", "laplacian")
