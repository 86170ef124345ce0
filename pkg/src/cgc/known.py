"""Fixed table of known (black-arrow) functions.

Each function acts row-wise on an ``(N, d_in)`` array and returns an
``(N, d_out)`` array together with an exact ``(N, d_out, d_in)`` Jacobian.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._syntax import Call, fmt_number, parse_call_text
from .errors import InputError, ParseError


@dataclass(frozen=True)
class _Impl:
    out_dim: Callable[[int], int | None]
    value: Callable
    jac: Callable
    params: tuple[str, ...] = ()
    doc: str = ""


def _diag(v):
    n, d = v.shape
    J = np.zeros((n, d, d))
    idx = np.arange(d)
    J[:, idx, idx] = v
    return J


def _same(d):
    return d


def _scalar_out(d):
    return 1


def _fixed(n_in, n_out=1):
    return lambda d: n_out if d == n_in else None


def _rows(cols):
    return np.stack(cols, axis=1)


def _lin_jac(n, coeffs):
    J = np.zeros((n, 1, len(coeffs)))
    for k, c in enumerate(coeffs):
        J[:, 0, k] = c
    return J


def _prod_jac(Z):
    n, d = Z.shape
    J = np.empty((n, 1, d))
    for k in range(d):
        J[:, 0, k] = np.prod(np.delete(Z, k, axis=1), axis=1)
    return J


def _cap(Z):  # (c, dV3, i3) -> i3 - exp(c) dV3
    return (Z[:, 2] - np.exp(Z[:, 0]) * Z[:, 1])[:, None]


def _cap_jac(Z):
    e = np.exp(Z[:, 0])
    return _rows([-e * Z[:, 1], -e, np.ones(len(Z))])[:, None, :]


def _res(Z):  # (r, V2, V3, i3) -> V2 - V3 - exp(r) i3
    return (Z[:, 1] - Z[:, 2] - np.exp(Z[:, 0]) * Z[:, 3])[:, None]


def _res_jac(Z):
    e = np.exp(Z[:, 0])
    one = np.ones(len(Z))
    return _rows([-e * Z[:, 3], one, -one, -e])[:, None, :]


def _ind2(Z):  # (l2, V2, di2) -> V2 + exp(l2) di2
    return (Z[:, 1] + np.exp(Z[:, 0]) * Z[:, 2])[:, None]


def _ind2_jac(Z):
    e = np.exp(Z[:, 0])
    return _rows([e * Z[:, 2], np.ones(len(Z)), e])[:, None, :]


def _ind1(Z):  # (l1, V1, V2, di1) -> V2 - V1 - exp(l1) di1
    return (Z[:, 2] - Z[:, 1] - np.exp(Z[:, 0]) * Z[:, 3])[:, None]


def _ind1_jac(Z):
    e = np.exp(Z[:, 0])
    one = np.ones(len(Z))
    return _rows([-e * Z[:, 3], -one, one, -e])[:, None, :]


def _darcy_split(Z):
    d = (Z.shape[1] - 2) // 2
    gu = Z[:, :d]
    lap = Z[:, d]
    a = Z[:, d + 1]
    ga = Z[:, d + 2:]
    return d, gu, lap, a, ga


def _darcy(Z):  # (grad u, lap u, a, grad a) -> -exp(a) (lap u + grad a . grad u)
    _, gu, lap, a, ga = _darcy_split(Z)
    return (-np.exp(a) * (lap + np.sum(ga * gu, axis=1)))[:, None]


def _darcy_jac(Z):
    d, gu, lap, a, ga = _darcy_split(Z)
    e = np.exp(a)
    J = np.zeros((len(Z), 1, Z.shape[1]))
    J[:, 0, :d] = -e[:, None] * ga
    J[:, 0, d] = -e
    J[:, 0, d + 1] = -e * (lap + np.sum(ga * gu, axis=1))
    J[:, 0, d + 2:] = -e[:, None] * gu
    return J


def _darcy_dim(d):
    return 1 if d >= 4 and d % 2 == 0 else None


_TABLE: dict[str, _Impl] = {
    "identity": _Impl(_same, lambda Z, p: Z, lambda Z, p: _diag(np.ones_like(Z))),
    "neg": _Impl(_same, lambda Z, p: -Z, lambda Z, p: _diag(-np.ones_like(Z))),
    "exp": _Impl(_same, lambda Z, p: np.exp(Z), lambda Z, p: _diag(np.exp(Z))),
    "square": _Impl(_same, lambda Z, p: Z * Z, lambda Z, p: _diag(2 * Z)),
    "cube": _Impl(_same, lambda Z, p: Z**3, lambda Z, p: _diag(3 * Z * Z)),
    "sum": _Impl(_scalar_out, lambda Z, p: Z.sum(axis=1, keepdims=True),
                 lambda Z, p: np.ones((Z.shape[0], 1, Z.shape[1]))),
    "product": _Impl(_scalar_out, lambda Z, p: Z.prod(axis=1, keepdims=True),
                     lambda Z, p: _prod_jac(Z)),
    "affine": _Impl(_same, lambda Z, p: p["a"] * Z + p["b"],
                    lambda Z, p: _diag(np.full_like(Z, p["a"])), ("a", "b")),
    "circuit_kcl": _Impl(_fixed(3), lambda Z, p: (Z[:, 0] + Z[:, 2] - Z[:, 1])[:, None],
                         lambda Z, p: _lin_jac(len(Z), [1.0, -1.0, 1.0]),
                         doc="(i1, i2, i3) -> i1 + i3 - i2"),
    "circuit_cap": _Impl(_fixed(3), lambda Z, p: _cap(Z), lambda Z, p: _cap_jac(Z),
                         doc="(c, dV3/dt, i3) -> i3 - exp(c) dV3/dt"),
    "circuit_res": _Impl(_fixed(4), lambda Z, p: _res(Z), lambda Z, p: _res_jac(Z),
                         doc="(r, V2, V3, i3) -> V2 - V3 - exp(r) i3"),
    "circuit_ind2": _Impl(_fixed(3), lambda Z, p: _ind2(Z), lambda Z, p: _ind2_jac(Z),
                          doc="(l2, V2, di2/dt) -> V2 + exp(l2) di2/dt"),
    "circuit_ind1": _Impl(_fixed(4), lambda Z, p: _ind1(Z), lambda Z, p: _ind1_jac(Z),
                          doc="(l1, V1, V2, di1/dt) -> V2 - V1 - exp(l1) di1/dt"),
    "darcy": _Impl(_darcy_dim, lambda Z, p: _darcy(Z), lambda Z, p: _darcy_jac(Z),
                   doc="(grad u, lap u, a, grad a) -> -exp(a) (lap u + grad a . grad u)"),
}

BUILTINS = tuple(_TABLE)


@dataclass(frozen=True)
class KnownFn:
    """A builtin known function, optionally parametrised (``affine(a=2.0, b=0.0)``)."""

    name: str
    params: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        if self.name not in _TABLE:
            raise InputError(f"unknown builtin function {self.name!r}")
        impl = _TABLE[self.name]
        given = dict(self.params)
        if set(given) != set(impl.params):
            raise InputError(f"{self.name} expects parameters {list(impl.params)}")
        object.__setattr__(self, "params", tuple((k, float(given[k])) for k in impl.params))

    @property
    def _impl(self) -> _Impl:
        return _TABLE[self.name]

    def out_dim(self, in_dim: int) -> int | None:
        return self._impl.out_dim(in_dim)

    def __call__(self, Z) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        return self._impl.value(Z, dict(self.params))

    def jac(self, Z) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        return self._impl.jac(Z, dict(self.params))

    @property
    def text(self) -> str:
        if not self.params:
            return self.name
        inner = ", ".join(f"{k}={fmt_number(v)}" for k, v in self.params)
        return f"{self.name}({inner})"

    def __str__(self):
        return self.text


def known_from_call(call) -> KnownFn:
    if not isinstance(call, Call):
        raise ParseError("expected function name", 0, 0, str(call))
    if call.name not in _TABLE:
        raise call.error(f"unknown builtin function {call.name!r}")
    if call.args:
        raise call.error("builtin function parameters must be keyword arguments")
    for v in call.kwargs.values():
        if not isinstance(v, float):
            raise call.error("builtin function parameters must be numbers")
    try:
        return KnownFn(call.name, tuple(call.kwargs.items()))
    except InputError as exc:
        raise call.error(str(exc)) from None


def parse_known(text: str) -> KnownFn:
    return known_from_call(parse_call_text(text))
