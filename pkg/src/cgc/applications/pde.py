"""Kernel collocation for nonlinear elliptic PDEs and coefficient recovery.

``pde_solve`` handles ``-Laplacian(u) + tau(u) = f`` in the interior with
``u = g`` on the boundary. The solution ``u`` is the unknown function; its
value and its Laplacian at the collocation points are the two functional
families, and the PDE is a hard known relation ``tau(u) + (-lap) = f``.

``pde_learn`` handles ``-div(exp(a) grad u) = f`` with both ``u`` and the
log-coefficient ``a`` unknown, given ``f`` in the interior, ``u`` on the
boundary and a few interior measurements of ``u``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import InputError
from ..gp import RepresenterModel
from ..graph_model import Edge, Graph, Known, Node, NodeKind, SampleSet, Unknown, Wire
from ..kernels import Gaussian, Kernel
from ..known import KnownFn, parse_known
from ..optimizer import OptimizerOptions
from ..solver import CgcProblem, RelaxationConfig


@dataclass
class PdeProblem:
    """Collocation setup on a box domain ``[lo, hi]^d``.

    ``tau`` names a builtin known function applied to ``u`` (solve only).
    ``kernel`` defaults to a Gaussian with lengthscale twice the interior
    grid spacing; ``coef_kernel`` is the kernel of the log-coefficient
    (learn only) and defaults to the same choice.
    """

    interior: np.ndarray
    boundary: np.ndarray
    f: Callable
    g: Callable
    tau: str | None = "cube"
    data_points: np.ndarray | None = None
    data_values: np.ndarray | None = None
    kernel: Kernel | None = None
    coef_kernel: Kernel | None = None
    lo: float = 0.0
    hi: float = 1.0
    spacing: float | None = None

    def __post_init__(self):
        self.interior = np.atleast_2d(np.asarray(self.interior, dtype=float))
        self.boundary = np.atleast_2d(np.asarray(self.boundary, dtype=float))
        if self.interior.shape[1] != self.boundary.shape[1]:
            raise InputError("interior and boundary points must share a dimension")
        d = self.dim
        if np.any(self.interior <= self.lo) or np.any(self.interior >= self.hi):
            raise InputError("interior points must lie strictly inside the domain")
        on_edge = np.any(np.isclose(self.boundary, self.lo) | np.isclose(self.boundary, self.hi), axis=1)
        if not np.all(on_edge):
            raise InputError("boundary points must lie on the domain boundary")
        if self.data_points is not None:
            self.data_points = np.asarray(self.data_points, dtype=float).reshape(-1, d)
            self.data_values = np.asarray(self.data_values, dtype=float).ravel()
            if len(self.data_values) != len(self.data_points):
                raise InputError("data points and values differ in length")
        if self.spacing is None:
            self.spacing = (self.hi - self.lo) / (round(len(self.interior) ** (1.0 / d)) + 1)
        if self.kernel is None:
            self.kernel = Gaussian(2.0 * self.spacing)
        if self.coef_kernel is None:
            self.coef_kernel = self.kernel

    @property
    def dim(self) -> int:
        return self.interior.shape[1]


def grid_problem(M: int, dim: int, f, g, tau="cube", n_boundary: int | None = None, **kw) -> PdeProblem:
    """Uniform interior grid with ``M`` points (a perfect power in 2-D) and uniform boundary points."""
    if dim == 1:
        x = np.linspace(0.0, 1.0, M + 2)[1:-1, None]
        b = np.array([[0.0], [1.0]])
        return PdeProblem(x, b, f, g, tau, spacing=1.0 / (M + 1), **kw)
    if dim != 2:
        raise InputError("only 1-D and 2-D domains are supported")
    m = int(round(math.sqrt(M)))
    if m * m != M:
        raise InputError("2-D interior point count must be a perfect square")
    h = 1.0 / (m + 1)
    s = np.linspace(h, 1.0 - h, m)
    X = np.array([[a, b] for a in s for b in s])
    nb = n_boundary if n_boundary is not None else 4 * (m + 1)
    return PdeProblem(X, square_boundary(nb), f, g, tau, spacing=h, **kw)


def square_boundary(n: int) -> np.ndarray:
    """``n`` points spaced uniformly along the boundary of the unit square."""
    s = np.arange(n) * 4.0 / n
    side, u = np.divmod(s, 1.0)
    pts = np.empty((n, 2))
    for k, (a, b) in enumerate([(u, 0 * u), (1 + 0 * u, u), (1 - u, 1 + 0 * u), (0 * u, 1 - u)]):
        sel = side == k
        pts[sel, 0] = a[sel]
        pts[sel, 1] = b[sel]
    return pts


def _call(fn, X):
    return np.asarray(fn(X), dtype=float).reshape(len(X))


# --------------------------------------------------------------------------
# forward problem


def pde_solve_problem(p: PdeProblem) -> CgcProblem:
    """Completion problem for ``-lap u + tau(u) = f``, ``u = g`` on the boundary."""
    if p.tau is None:
        raise InputError("pde_solve needs a nonlinearity tau (use 'affine(a=0.0, b=0.0)' for none)")
    d = p.dim
    nodes = (Node("x", dim=d), Node("u"), Node("lap"), Node("F"))
    edges = (
        Edge("u_fn", "x", "u", Unknown("u_fn")),
        Edge("u_lap", "x", "lap", Unknown("u_fn"), ("laplacian",)),
        Edge("tau", "u", "F", Known(parse_known(p.tau))),
        Edge("minus", "lap", "F", Known(KnownFn("neg"))),
    )
    g = Graph(nodes, edges)
    Mi, Mb = len(p.interior), len(p.boundary)
    X = np.vstack([p.interior, p.boundary])
    inner = np.r_[np.ones(Mi, bool), np.zeros(Mb, bool)]
    u = np.zeros((Mi + Mb, 1))
    u[~inner, 0] = _call(p.g, p.boundary)
    F = np.zeros((Mi + Mb, 1))
    F[inner, 0] = _call(p.f, p.interior)
    data = SampleSet.from_columns(g, {"x": X, "u": u, "F": F}, {"u": ~inner, "F": inner})
    return CgcProblem(g, {"u_fn": p.kernel}, data, RelaxationConfig.hard())


def pde_solve(p: PdeProblem, opts: OptimizerOptions | None = None) -> RepresenterModel:
    """Model of ``u`` with value and Laplacian anchors at the collocation points."""
    from ..pipeline import solve

    cp = pde_solve_problem(p)
    sol = solve(cp, opts or OptimizerOptions(max_outer=200, tol_rel=1e-12), init="zeros")
    return sol.models["u_fn"]


# --------------------------------------------------------------------------
# inverse problem


def darcy_forward(a, grad_a, grad_u, lap_u):
    """``-div(exp(a) grad u) = -exp(a) (lap u + grad a . grad u)``."""
    return -np.exp(a) * (lap_u + np.sum(grad_a * grad_u, axis=-1))


def pde_learn_problem(p: PdeProblem) -> CgcProblem:
    """Completion problem with unknown ``u`` and log-coefficient ``a``."""
    d = p.dim
    nodes = (
        Node("x", dim=d), Node("u"), Node("du", dim=d + 1), Node("a", dim=d + 1),
        Node("w", NodeKind.AGGREGATE, 2 * d + 2), Node("F"),
    )
    edges = (
        Edge("u_fn", "x", "u", Unknown("u_fn")),
        Edge("u_diff", "x", "du", Unknown("u_fn"), ("grad", "laplacian")),
        Edge("a_fn", "x", "a", Unknown("a_fn"), ("value", "grad")),
        Edge("w[0]", "du", "w", Wire(0)),
        Edge("w[1]", "a", "w", Wire(1)),
        Edge("darcy", "w", "F", Known(KnownFn("darcy"))),
    )
    g = Graph(nodes, edges)
    parts = [p.interior, p.boundary]
    if p.data_points is not None:
        parts.append(p.data_points)
    X = np.vstack(parts)
    Mi, Mb = len(p.interior), len(p.boundary)
    N = len(X)
    inner = np.zeros(N, bool)
    inner[:Mi] = True
    u = np.zeros((N, 1))
    u[Mi:Mi + Mb, 0] = _call(p.g, p.boundary)
    if p.data_points is not None:
        u[Mi + Mb:, 0] = p.data_values
    F = np.zeros((N, 1))
    F[inner, 0] = _call(p.f, p.interior)
    data = SampleSet.from_columns(g, {"x": X, "u": u, "F": F}, {"u": ~inner, "F": inner})
    return CgcProblem(g, {"u_fn": p.kernel, "a_fn": p.coef_kernel}, data, RelaxationConfig.hard())


def pde_learn(p: PdeProblem, opts: OptimizerOptions | None = None):
    """``(a model, u model)`` for ``-div(exp(a) grad u) = f``.

    ``a`` is identifiable only up to the gauge left free by the data; the
    minimum-norm representative is returned.
    """
    from ..pipeline import solve

    cp = pde_learn_problem(p)
    sol = solve(cp, opts or OptimizerOptions(max_outer=200, tol_rel=1e-12), init="zeros")
    return sol.models["a_fn"], sol.models["u_fn"]


# --------------------------------------------------------------------------
# manufactured instances


def manufactured_solve(M: int, dim: int, kernel: Kernel | None = None):
    """``(problem, u_true)`` for ``-lap u + u^3 = f`` with ``u = prod_k sin(pi x_k)``."""

    def u_true(X):
        return np.prod(np.sin(math.pi * np.atleast_2d(X)), axis=1)

    def f(X):
        u = u_true(X)
        return dim * math.pi ** 2 * u + u ** 3

    return grid_problem(M, dim, f, u_true, "cube", kernel=kernel), u_true


def manufactured_learn(M: int = 30, n_data: int = 10, ls: float = 0.2):
    """``(problem, u_true, a_true)`` for a 1-D coefficient recovery instance.

    ``a(x) = 0.3 sin(pi x)`` and ``u(x) = sin(pi x) + 0.5 x``; ``f`` is the
    exact forward operator and ``u`` is measured at ``n_data`` interior
    points offset from the collocation grid.
    """
    pi = math.pi

    def a_true(x):
        return 0.3 * np.sin(pi * x)

    def u_true(x):
        return np.sin(pi * x) + 0.5 * x

    def f(X):
        x = X[:, 0]
        return darcy_forward(a_true(x), 0.3 * pi * np.cos(pi * x)[:, None],
                             (pi * np.cos(pi * x) + 0.5)[:, None], -pi ** 2 * np.sin(pi * x))

    xi = np.linspace(0.0, 1.0, M + 2)[1:-1, None]
    xd = np.linspace(0.0, 1.0, n_data + 2)[1:-1, None] + 0.013
    p = PdeProblem(xi, np.array([[0.0], [1.0]]), f, lambda X: u_true(X[:, 0]), None,
                   data_points=xd, data_values=u_true(xd[:, 0]), kernel=Gaussian(ls), coef_kernel=Gaussian(ls))
    return p, u_true, a_true
