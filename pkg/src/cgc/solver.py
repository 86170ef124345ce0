"""Relaxed graph-completion objective and model extraction.

The objective over node values ``Z`` and edge outputs ``Y`` is

    sum_{unknown functions} Y^T (K(Z_src, Z_src) + diag(1/lambda1))^-1 Y
  + sum_{known edges}    lambda1 |f(Z_src) - Y|^2
  + sum_{sum nodes}      lambda2 |Z_j - sum_e Y_e|^2
  + sum_{observed}       lambda3 |Z - X|^2
  + sum_{random nodes}   |Z|^2_{K_i}

with aggregate nodes eliminated as exact concatenations. A weight equal to
``inf`` turns its term into a hard constraint: known outputs and node sums
are substituted, hard observations are fixed, and whatever cannot be
substituted (a node that is both observed and the sum of several inputs)
is kept as an explicit equality constraint for the optimizer.

Unknown-function outputs that enter no other term are marginalised out of
their quadratic form; this leaves the optimum unchanged and keeps the Gram
matrices as small as the data allows.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg, sparse

from .errors import (
    InfeasibleConstraint,
    InputError,
    InvalidGraph,
    MissingKernel,
    ShapeMismatch,
)
from .gp import RepresenterModel
from .graph_model import Edge, Graph, NodeKind, SampleSet, validate
from .kernels import Kernel, LinearFunctional, chol_jitter, op_block, tags_to_ops
from .objective import Objective

INF = math.inf
FREE, FIXED, DERIVED, PRUNED, FROZEN = 0, 1, 2, 3, 4


@dataclass
class RelaxationConfig:
    """Relaxation weights; missing entries fall back to ``default`` (1000)."""

    lambda1: dict[str, float] = field(default_factory=dict)
    lambda2: dict[str, float] = field(default_factory=dict)
    lambda3: dict[str, float] = field(default_factory=dict)
    default: float = 1000.0

    def __post_init__(self):
        for table in (self.lambda1, self.lambda2, self.lambda3):
            for k, v in table.items():
                if not v > 0:
                    raise InputError(f"relaxation weight for {k!r} must be positive")
        if not self.default > 0:
            raise InputError("default relaxation weight must be positive")

    def l1(self, edge: str) -> float:
        return self.lambda1.get(edge, self.default)

    def l2(self, node: str) -> float:
        return self.lambda2.get(node, self.default)

    def l3(self, node: str) -> float:
        return self.lambda3.get(node, self.default)

    @classmethod
    def hard(cls) -> "RelaxationConfig":
        return cls(default=INF)

    def to_json(self) -> dict:
        enc = lambda d: {k: (v if math.isfinite(v) else "inf") for k, v in sorted(d.items())}
        return {"lambda1": enc(self.lambda1), "lambda2": enc(self.lambda2),
                "lambda3": enc(self.lambda3),
                "default": self.default if math.isfinite(self.default) else "inf"}


@dataclass
class CgcProblem:
    graph: Graph
    kernels: dict[str, Kernel]
    data: SampleSet
    relax: RelaxationConfig = field(default_factory=RelaxationConfig)
    random_cov: dict[str, np.ndarray] = field(default_factory=dict)

    def covariance(self, name: str) -> np.ndarray:
        cov = self.random_cov.get(name)
        if cov is None:
            cov = self.graph.node(name).covariance
        return np.atleast_2d(np.asarray(cov, dtype=float))

    @property
    def n_samples(self) -> int:
        return self.data.n_samples


@dataclass
class SolveState:
    Z: dict[str, np.ndarray]
    Y: dict[str, np.ndarray]

    def copy(self) -> "SolveState":
        return SolveState({k: v.copy() for k, v in self.Z.items()},
                          {k: v.copy() for k, v in self.Y.items()})


@dataclass
class CgcSolution:
    state: SolveState
    models: dict[str, RepresenterModel]
    objective_trace: list[float]
    termination: str
    terms: dict[str, float] = field(default_factory=dict)
    trace: object = None


# --------------------------------------------------------------------------
# compiled layout


@dataclass
class _Entity:
    key: tuple[str, str]  # ("Z", node) or ("Y", edge)
    dim: int
    status: np.ndarray  # (N, dim) ints
    const: np.ndarray  # (N, dim) values for FIXED / FROZEN / PRUNED entries
    deps: list[tuple[str, str]] = field(default_factory=list)
    index: np.ndarray | None = None  # (N, dim) position in x or -1


@dataclass
class _Block:
    edge: str
    op: tuple[str, int]
    col: int | None  # column of Y_edge; None for vector-valued groups
    rows: np.ndarray


@dataclass
class _Group:
    name: str
    kernel: Kernel
    source: str
    edges: list[Edge]
    blocks: list[_Block]
    q: int
    nugget: np.ndarray
    moving: bool = True  # anchor locations depend on x

    @property
    def size(self) -> int:
        return int(sum(len(b.rows) for b in self.blocks))


@dataclass
class _Eval:
    values: dict
    jac: dict | None


def _hash(arr: np.ndarray) -> str:
    return hashlib.sha1(np.ascontiguousarray(arr).tobytes()).hexdigest()


class CgcObjective(Objective):
    """The assembled objective as a function of its free variables.

    Calling the object on a :class:`SolveState` (or on the flat vector
    returned by :meth:`pack`) gives the objective value; :meth:`terms`
    gives the breakdown.
    """

    def __init__(self, problem: CgcProblem):
        self.problem = problem
        self.graph = g = problem.graph
        diags = validate(g)
        if diags:
            raise InvalidGraph(diags)
        if problem.data.node_names != g.node_names:
            raise ShapeMismatch("sample set nodes do not match the graph")
        self.N = N = problem.n_samples
        self.relax = problem.relax
        self._chol_cache: dict[str, tuple[str, np.ndarray, float]] = {}
        for fn in g.unknown_functions():
            if fn not in problem.kernels:
                raise MissingKernel(f"no kernel for unknown function {fn!r}")
        self._rand_chol = {}
        for n in g.nodes:
            if n.kind == NodeKind.RANDOM:
                L, _ = chol_jitter(problem.covariance(n.name))
                self._rand_chol[n.name] = L

        self.X = {n.name: problem.data.column(n.name, n.dim) for n in g.nodes}
        self.obs = {n.name: problem.data.observed(n.name) for n in g.nodes}
        self._build_entities()
        self._order()
        self._build_groups()
        self._index()
        self._prune()
        self._check_constraints()

    # -- layout ------------------------------------------------------------

    def _build_entities(self):
        g, N, relax = self.graph, self.N, self.relax
        ents: dict[tuple[str, str], _Entity] = {}
        self.constraint_rows: list[tuple[str, np.ndarray, str]] = []  # (node, rows, kind)
        hard_obs = {}
        for n in g.nodes:
            rows = self.obs[n.name] & (relax.l3(n.name) == INF)
            hard_obs[n.name] = rows
        # hard observations of aggregates are pushed to their sources
        for n in g.nodes:
            if n.kind != NodeKind.AGGREGATE or not hard_obs[n.name].any():
                continue
            rows = hard_obs[n.name]
            off = 0
            for w in g.wires(n.name):
                d = g.node(w.source).dim
                part = self.X[n.name][:, off:off + d]
                src = w.source
                clash = rows & hard_obs[src]
                if clash.any() and not np.allclose(self.X[src][clash], part[clash], atol=1e-12):
                    raise InfeasibleConstraint(f"observations of {n.name!r} and {src!r} disagree")
                self.X[src] = np.where(rows[:, None], part, self.X[src])
                hard_obs[src] = hard_obs[src] | rows
                off += d
        self.hard_obs = hard_obs

        for n in g.nodes:
            key = ("Z", n.name)
            status = np.full((N, n.dim), FREE)
            const = np.zeros((N, n.dim))
            deps = []
            if n.kind == NodeKind.AGGREGATE:
                status[:] = DERIVED
                deps = [("Z", w.source) for w in g.wires(n.name)]
            else:
                inc = g.incoming(n.name)
                fixed = hard_obs[n.name]
                status[fixed] = FIXED
                const[fixed] = self.X[n.name][fixed]
                if inc and relax.l2(n.name) == INF:
                    status[~fixed] = DERIVED
                    deps = [("Y", e.name) for e in inc]
            ents[key] = _Entity(key, n.dim, status, const, deps)

        for e in g.edges:
            if e.is_wire:
                continue
            key = ("Y", e.name)
            d = g.output_dim(e)
            status = np.full((N, d), FREE)
            const = np.zeros((N, d))
            deps = []
            if e.is_known and relax.l1(e.name) == INF:
                status[:] = DERIVED
                deps = [("Z", e.source)]
            ents[key] = _Entity(key, d, status, const, deps)

        # hard node sums at hard-observed rows: pivot on a lone unknown input, else constrain
        for n in g.nodes:
            inc = g.incoming(n.name)
            if n.kind == NodeKind.AGGREGATE or not inc or relax.l2(n.name) != INF:
                continue
            rows = hard_obs[n.name]
            if not rows.any():
                continue
            if len(inc) == 1 and inc[0].is_unknown:
                ent = ents[("Y", inc[0].name)]
                ent.status[rows] = FIXED
                ent.const[rows] = self.X[n.name][rows]
            else:
                self.constraint_rows.append((n.name, rows, "sum"))
        self.entities = ents

    def _order(self):
        while True:
            order, cycle = self._toposort()
            if cycle is None:
                self.order = order
                return
            # demote one sum node on the cycle to free variables plus a constraint
            node = next(k[1] for k in cycle if k[0] == "Z" and self.graph.node(k[1]).kind != NodeKind.AGGREGATE)
            ent = self.entities[("Z", node)]
            rows = np.any(ent.status == DERIVED, axis=1)
            ent.status[rows] = FREE
            ent.deps = []
            self.constraint_rows.append((node, rows, "demoted"))

    def _toposort(self):
        ents = self.entities
        state: dict = {}
        order: list = []
        stack: list = []

        def visit(k):
            if state.get(k) == 2:
                return None
            if state.get(k) == 1:
                return stack[stack.index(k):]
            state[k] = 1
            stack.append(k)
            for d in ents[k].deps:
                cyc = visit(d)
                if cyc is not None:
                    return cyc
            stack.pop()
            state[k] = 2
            order.append(k)
            return None

        for k in ents:
            cyc = visit(k)
            if cyc is not None:
                return None, cyc
        return order, None

    def _build_groups(self):
        g, relax = self.graph, self.relax
        self.groups: list[_Group] = []
        for fn, members in g.unknown_functions().items():
            src = g.node(members[0].source)
            blocks = []
            nug = []
            vector = len(members) == 1 and not members[0].functionals and g.node(members[0].target).dim > 1
            q = g.node(members[0].target).dim if vector else 1
            for e in members:
                lam = relax.l1(e.name)
                nug_e = 0.0 if lam == INF else 1.0 / lam
                if vector:
                    blocks.append(_Block(e.name, ("value", 0), None, np.arange(self.N)))
                    nug.append(np.full(self.N, nug_e))
                    continue
                for k, op in enumerate(tags_to_ops(e.tags, src.dim)):
                    blocks.append(_Block(e.name, op, k, np.arange(self.N)))
                    nug.append(np.full(self.N, nug_e))
            self.groups.append(_Group(fn, self.problem.kernels[fn], src.name, members, blocks, q,
                                      np.concatenate(nug) if nug else np.zeros(0)))

    def _index(self):
        n = 0
        for k in self.order:
            ent = self.entities[k]
            idx = np.full(ent.status.shape, -1)
            free = ent.status == FREE
            cnt = int(free.sum())
            idx[free] = np.arange(n, n + cnt)
            n += cnt
            ent.index = idx
        self.n = n

    def _prune(self):
        """Marginalise unknown outputs that only enter their own quadratic form."""
        if self.n == 0:
            return
        ev = self._evaluate(np.zeros(self.n), jac=True, structural=True)
        mats = [abs(J) for J in self._residual_jacs(ev, structural=True)]
        mats += [abs(J) for J in self._constraint_jacs(ev, structural=True)]
        for grp in self.groups:
            J = ev.jac[("Z", grp.source)]
            if J.nnz:
                mats.append(abs(J))
            else:
                grp.moving = False
        used = np.zeros(self.n, dtype=bool)
        for M in mats:
            if M.shape[0]:
                used |= np.asarray(M.sum(axis=0)).ravel() > 0
        changed = False
        unknown_edges = {e.name for grp in self.groups for e in grp.edges}
        for k in self.order:
            ent = self.entities[k]
            free = ent.status == FREE
            unused = free & ~used[np.where(free, ent.index, 0)]
            if not unused.any():
                continue
            if k[0] == "Y" and k[1] in unknown_edges:
                grp = next(gr for gr in self.groups if any(e.name == k[1] for e in gr.edges))
                if grp.q > 1:
                    unused = np.repeat(unused.all(axis=1, keepdims=True), ent.dim, axis=1)
                if not unused.any():
                    continue
                ent.status[unused] = PRUNED
            else:
                ent.status[unused] = FROZEN
            changed = True
        if not changed:
            return
        for grp in self.groups:
            keep_blocks, nug = [], []
            off = 0
            for b in grp.blocks:
                ent = self.entities[("Y", b.edge)]
                col = 0 if b.col is None else b.col
                keep = ent.status[b.rows, col] != PRUNED
                nug.append(grp.nugget[off:off + len(b.rows)][keep])
                off += len(b.rows)
                if keep.any():
                    keep_blocks.append(replace(b, rows=b.rows[keep]))
            grp.blocks = keep_blocks
            grp.nugget = np.concatenate(nug) if nug else np.zeros(0)
        self._index()

    def _check_constraints(self):
        self.n_constraints = 0
        if not self.constraint_rows:
            return
        x0 = np.zeros(self.n)
        ev = self._evaluate(x0, jac=True, structural=True)
        kept = []
        for (node, rows, kind), J in zip(self.constraint_rows, self._constraint_jacs(ev, structural=True)):
            d = self.graph.node(node).dim
            live = np.asarray(abs(J).sum(axis=1)).ravel().reshape(-1, d).any(axis=1)
            sel = np.flatnonzero(rows)
            if (~live).any():
                evn = self._evaluate(x0, jac=False)
                c = self._constraint_values(evn, [(node, rows, kind)])[0].reshape(-1, d)
                dead = c[~live]
                scale = 1.0 + np.abs(self.X[node][sel[~live]]).max(initial=0.0) if kind == "sum" else 1.0
                if dead.size and np.max(np.abs(dead)) > 1e-8 * scale:
                    raise InfeasibleConstraint(
                        f"hard constraints at node {node!r} contradict the observed data "
                        f"(residual {np.max(np.abs(dead)):.3g})")
            mask = np.zeros_like(rows)
            mask[sel[live]] = True
            if mask.any():
                kept.append((node, mask, kind))
        self.constraint_rows = kept
        self.has_constraints = bool(kept)
        if kept:
            ev = self._evaluate(x0, jac=False)
            self.n_constraints = sum(v.size for v in self._constraint_values(ev, kept))

    # -- evaluation --------------------------------------------------------

    def _evaluate(self, x, jac=False, structural=False, pruned=None) -> _Eval:
        g, N = self.graph, self.N
        vals: dict = {}
        jacs: dict | None = {} if jac else None
        for k in self.order:
            ent = self.entities[k]
            d = ent.dim
            st = ent.status
            v = ent.const.copy()
            if pruned is not None and k in pruned:
                v = np.where(st == PRUNED, pruned[k], v)
            free = st == FREE
            v[free] = x[ent.index[free]]
            J = None
            if jac:
                fr = ent.index[free]
                flat = np.flatnonzero(free.ravel())
                J = sparse.csr_matrix((np.ones(len(fr)), (flat, fr)), shape=(N * d, self.n))
            der = st == DERIVED
            if der.any():
                kind, name = k
                if kind == "Z" and g.node(name).kind == NodeKind.AGGREGATE:
                    parts = [vals[dep] for dep in ent.deps]
                    v = np.concatenate(parts, axis=1) if parts else v
                    if jac:
                        J = self._concat_jac([jacs[dep] for dep in ent.deps], [p.shape[1] for p in parts])
                elif kind == "Z":
                    total = sum(vals[dep] for dep in ent.deps)
                    v = np.where(der, total, v)
                    if jac:
                        Jt = sum(jacs[dep] for dep in ent.deps)
                        D = sparse.diags(der.ravel().astype(float))
                        J = J + D @ Jt
                else:
                    e = g.edge(name)
                    za = vals[("Z", e.source)]
                    v = e.role.fn(za) if N else np.zeros((0, d))
                    if jac:
                        J = self._known_jac(e, za, jacs[("Z", e.source)], structural)
            vals[k] = v
            if jac:
                jacs[k] = sparse.csr_matrix(J)
        return _Eval(vals, jacs)

    def _concat_jac(self, Js, dims):
        N = self.N
        D = sum(dims)
        if N == 0:
            return sparse.csr_matrix((0, self.n))
        stacked = sparse.vstack(Js).tocsr()
        perm = np.empty(N * D, dtype=int)
        off_stack, off_col = 0, 0
        for d in dims:
            rows = np.arange(N)[:, None] * D + off_col + np.arange(d)[None, :]
            perm[rows.ravel()] = off_stack + np.arange(N * d)
            off_stack += N * d
            off_col += d
        return stacked[perm]

    def _known_jac(self, e: Edge, za, Jza, structural=False):
        N = self.N
        if N == 0:
            return sparse.csr_matrix((0, self.n))
        jb = e.role.fn.jac(za)
        if structural:
            jb = np.ones_like(jb)
        dout, din = jb.shape[1], jb.shape[2]
        B = sparse.bsr_matrix((jb, np.arange(N), np.arange(N + 1)), shape=(N * dout, N * din))
        return B.tocsr() @ Jza

    # -- terms -------------------------------------------------------------

    def _residual_specs(self):
        """Yield (term, name, weight) for every soft penalty."""
        g, relax = self.graph, self.relax
        for e in g.edges:
            if e.is_known and relax.l1(e.name) != INF:
                yield "L1", e.name, relax.l1(e.name)
        for n in g.nodes:
            if n.kind != NodeKind.AGGREGATE and g.incoming(n.name) and relax.l2(n.name) != INF:
                yield "L2", n.name, relax.l2(n.name)
        for n in g.nodes:
            lam = relax.l3(n.name)
            if lam != INF and self.obs[n.name].any():
                yield "L3", n.name, lam
        for n in g.nodes:
            if n.kind == NodeKind.RANDOM:
                yield "random", n.name, None

    def _residual_values(self, ev):
        g = self.graph
        out = []
        for term, name, lam in self._residual_specs():
            V = ev.values
            if term == "L1":
                e = g.edge(name)
                r = math.sqrt(lam) * (e.role.fn(V[("Z", e.source)]) - V[("Y", name)])
            elif term == "L2":
                total = sum(V[("Y", e.name)] for e in g.incoming(name))
                r = math.sqrt(lam) * (V[("Z", name)] - total)
            elif term == "L3":
                rows = self.obs[name]
                r = math.sqrt(lam) * (V[("Z", name)][rows] - self.X[name][rows])
            else:
                L = self._rand_chol[name]
                r = linalg.solve_triangular(L, V[("Z", name)].T, lower=True).T
            out.append((term, r.ravel()))
        return out

    def _residual_jacs(self, ev, structural=False):
        g, N = self.graph, self.N
        sgn = 1.0 if structural else -1.0
        out = []
        for term, name, lam in self._residual_specs():
            J = ev.jac
            if term == "L1":
                e = g.edge(name)
                Jf = self._known_jac(e, ev.values[("Z", e.source)], J[("Z", e.source)], structural)
                M = math.sqrt(lam) * (Jf + sgn * J[("Y", name)])
            elif term == "L2":
                Jt = sum(J[("Y", e.name)] for e in g.incoming(name))
                M = math.sqrt(lam) * (J[("Z", name)] + sgn * Jt)
            elif term == "L3":
                d = g.node(name).dim
                rows = np.flatnonzero(np.repeat(self.obs[name], d))
                M = math.sqrt(lam) * J[("Z", name)][rows]
            else:
                Linv = linalg.solve_triangular(self._rand_chol[name], np.eye(g.node(name).dim), lower=True)
                if structural:
                    Linv = np.abs(Linv)
                M = sparse.kron(sparse.eye(N), sparse.csr_matrix(Linv)) @ J[("Z", name)]
            out.append(sparse.csr_matrix(M))
        return out

    def _constraint_values(self, ev, rows_spec=None):
        g = self.graph
        out = []
        for node, rows, kind in (rows_spec if rows_spec is not None else self.constraint_rows):
            total = sum(ev.values[("Y", e.name)] for e in g.incoming(node))
            if kind == "sum":
                c = total[rows] - self.X[node][rows]
            else:
                c = ev.values[("Z", node)][rows] - total[rows]
            out.append(c.ravel())
        return out

    def _constraint_jacs(self, ev, structural=False):
        g = self.graph
        sgn = 1.0 if structural else -1.0
        out = []
        for node, rows, kind in self.constraint_rows:
            d = g.node(node).dim
            sel = np.flatnonzero(np.repeat(rows, d))
            Jt = sum(ev.jac[("Y", e.name)] for e in g.incoming(node))
            if kind == "sum":
                M = Jt[sel]
            else:
                M = ev.jac[("Z", node)][sel] + sgn * Jt[sel]
            out.append(sparse.csr_matrix(M))
        return out

    # -- quadratic forms ---------------------------------------------------

    def _points(self, grp, ev):
        return ev.values[("Z", grp.source)]

    def _gram(self, grp: _Group, Za) -> tuple[np.ndarray, float]:
        key = _hash(Za) + _hash(grp.nugget) + str([len(b.rows) for b in grp.blocks])
        hit = self._chol_cache.get(grp.name)
        if hit is not None and hit[0] == key:
            return hit[1], hit[2]
        A = self._gram_matrix(grp, Za)
        L, jit = chol_jitter(A)
        self._chol_cache[grp.name] = (key, L, jit)
        return L, jit

    def _gram_matrix(self, grp, Za):
        n = grp.size
        A = np.empty((n, n))
        offs = np.cumsum([0] + [len(b.rows) for b in grp.blocks])
        for i, bi in enumerate(grp.blocks):
            for j in range(i, len(grp.blocks)):
                bj = grp.blocks[j]
                M = op_block(grp.kernel, bi.op, Za[bi.rows], bj.op, Za[bj.rows])
                A[offs[i]:offs[i + 1], offs[j]:offs[j + 1]] = M
                if j != i:
                    A[offs[j]:offs[j + 1], offs[i]:offs[i + 1]] = M.T
        A = 0.5 * (A + A.T)
        A[np.diag_indices(n)] += grp.nugget
        return A

    def _group_Y(self, grp, ev):
        parts = []
        for b in grp.blocks:
            Ye = ev.values[("Y", b.edge)]
            parts.append(Ye[b.rows] if b.col is None else Ye[b.rows, b.col][:, None])
        if not parts:
            return np.zeros((0, grp.q))
        return np.concatenate(parts, axis=0)

    def _group_J(self, grp, ev, comp):
        mats = []
        for b in grp.blocks:
            ent = self.entities[("Y", b.edge)]
            d = ent.dim
            col = comp if b.col is None else b.col
            mats.append(ev.jac[("Y", b.edge)][b.rows * d + col])
        return sparse.vstack(mats).tocsr() if mats else sparse.csr_matrix((0, self.n))

    def _quad(self, ev):
        out = []
        for grp in self.groups:
            if grp.size == 0:
                out.append((grp, 0.0, None, None))
                continue
            Za = self._points(grp, ev)
            L, _ = self._gram(grp, Za)
            Yg = self._group_Y(grp, ev)
            W = linalg.solve_triangular(L, Yg, lower=True, check_finite=False)
            alpha = linalg.solve_triangular(L.T, W, lower=False, check_finite=False)
            out.append((grp, float(np.sum(W * W)), L, alpha))
        return out

    def _quad_grad_points(self, grp, Za, alpha):
        """Gradient of ``Y^T A(Z)^-1 Y`` with respect to the anchor locations."""
        G = np.zeros_like(Za)
        offs = np.cumsum([0] + [len(b.rows) for b in grp.blocks])
        for i, bi in enumerate(grp.blocks):
            ai = alpha[offs[i]:offs[i + 1]]
            for c in range(Za.shape[1]):
                acc = np.zeros_like(ai)
                for j, bj in enumerate(grp.blocks):
                    M = op_block(grp.kernel, bi.op, Za[bi.rows], bj.op, Za[bj.rows], shift_axis=c)
                    acc += M @ alpha[offs[j]:offs[j + 1]]
                np.add.at(G[:, c], bi.rows, -2.0 * np.sum(ai * acc, axis=1))
        return G

    # -- public API --------------------------------------------------------

    def value(self, x) -> float:
        return self.terms(x)["total"]

    def terms(self, x) -> dict[str, float]:
        if not isinstance(x, np.ndarray):
            x = self.pack(x)
        ev = self._evaluate(x)
        out = {"rkhs": 0.0, "L1": 0.0, "L2": 0.0, "L3": 0.0, "random": 0.0}
        for _, q, _, _ in self._quad(ev):
            out["rkhs"] += q
        for term, r in self._residual_values(ev):
            out[term] += float(r @ r)
        out["total"] = sum(out.values())
        return out

    def gn_factor(self, x):
        ev = self._evaluate(x, jac=True)
        g = np.zeros(self.n)
        F = 0.0
        rs, Js = [], []
        for grp, q, L, alpha in self._quad(ev):
            if L is None:
                continue
            F += q
            W = linalg.solve_triangular(L, self._group_Y(grp, ev), lower=True, check_finite=False)
            for c in range(grp.q):
                PJ = self._group_J(grp, ev, c)
                g += 2.0 * (PJ.T @ alpha[:, c])
                rs.append(W[:, c])
                Js.append(linalg.solve_triangular(L, PJ.toarray(), lower=True, check_finite=False))
            if grp.moving:
                Za = self._points(grp, ev)
                Gz = self._quad_grad_points(grp, Za, alpha)
                g += ev.jac[("Z", grp.source)].T @ Gz.ravel()
        for (term, r), J in zip(self._residual_values(ev), self._residual_jacs(ev)):
            F += float(r @ r)
            g += 2.0 * (J.T @ r)
            rs.append(r)
            Js.append(J.toarray())
        if not rs:
            return F, g, np.zeros((0, self.n)), np.zeros(0)
        return F, g, np.vstack(Js), np.concatenate(rs)

    def gradient(self, x):
        return self.gn_factor(x)[1]

    def constraints(self, x):
        if not self.has_constraints:
            return np.zeros(0), np.zeros((0, self.n))
        ev = self._evaluate(x, jac=True)
        c = np.concatenate(self._constraint_values(ev))
        C = sparse.vstack(self._constraint_jacs(ev)).toarray()
        return c, C

    # packing

    def pack(self, state: SolveState) -> np.ndarray:
        x = np.zeros(self.n)
        for k in self.order:
            ent = self.entities[k]
            src = state.Z if k[0] == "Z" else state.Y
            if k[1] not in src:
                continue
            arr = np.asarray(src[k[1]], dtype=float).reshape(self.N, ent.dim)
            free = ent.status == FREE
            x[ent.index[free]] = arr[free]
        return x

    def unpack(self, x) -> SolveState:
        ev = self._evaluate(x)
        pruned = self._pruned_predictions(ev)
        if pruned:
            ev = self._evaluate(x, pruned=pruned)
        Z = {k[1]: v for k, v in ev.values.items() if k[0] == "Z"}
        Y = {k[1]: v for k, v in ev.values.items() if k[0] == "Y"}
        return SolveState(Z, Y)

    def _pruned_predictions(self, ev) -> dict:
        out = {}
        models = None
        for k in self.order:
            ent = self.entities[k]
            if not (ent.status == PRUNED).any():
                continue
            if models is None:
                models = self._models(ev)
            e = self.graph.edge(k[1])
            model = models[e.role.function]
            Za = ev.values[("Z", e.source)]
            pred = np.zeros((self.N, ent.dim))
            if not e.functionals and ent.dim > 1:
                pred = model(Za)
            else:
                for col, op in enumerate(tags_to_ops(e.tags, Za.shape[1])):
                    pred[:, col] = model(Za, op).ravel()
            out[k] = pred
        return out

    def perturbation_scale(self) -> float:
        vals = [self.X[n][self.obs[n]] for n in self.X if self.obs[n].any()]
        if not vals:
            return 1.0
        allv = np.concatenate([v.ravel() for v in vals])
        s = float(np.std(allv))
        return s if s > 0 else 1.0

    # models

    def _models(self, ev) -> dict[str, RepresenterModel]:
        models = {}
        for grp, _, L, alpha in self._quad(ev):
            Za = self._points(grp, ev)
            anchors = []
            for b in grp.blocks:
                kind, axis = b.op
                anchors.extend(LinearFunctional(kind, tuple(Za[r]), axis) for r in b.rows)
            if L is None:
                coeffs = np.zeros((0, grp.q)) if grp.q > 1 else np.zeros(0)
                jit = 0.0
            else:
                coeffs = alpha if grp.q > 1 else alpha[:, 0]
                jit = self._chol_cache[grp.name][2]
            nug = float(grp.nugget.max()) if grp.nugget.size else 0.0
            models[grp.name] = RepresenterModel(grp.kernel, anchors, coeffs, nug, jit)
        return models

    def extract_models(self, state) -> dict[str, RepresenterModel]:
        x = state if isinstance(state, np.ndarray) else self.pack(state)
        return self._models(self._evaluate(x))


# --------------------------------------------------------------------------
# module-level operations


def assemble_objective(p: CgcProblem) -> CgcObjective:
    return CgcObjective(p)


def hard_variant(p: CgcProblem) -> CgcObjective:
    """Objective with every relaxation weight set to infinity."""
    return CgcObjective(replace(p, relax=RelaxationConfig.hard()))


def _terms_on_state(p: CgcProblem, state: SolveState) -> dict[str, float]:
    """Term breakdown evaluated directly on a full state (no substitution)."""
    g, relax = p.graph, p.relax
    out = {"L1": 0.0, "L2": 0.0, "L3": 0.0}
    for e in g.edges:
        if e.is_known:
            lam = relax.l1(e.name)
            r = e.role.fn(state.Z[e.source]) - state.Y[e.name]
            out["L1"] += (lam if lam != INF else 1.0) * float(np.sum(r * r)) if lam != INF else 0.0
    for n in g.nodes:
        if n.kind == NodeKind.AGGREGATE:
            continue
        inc = g.incoming(n.name)
        if inc:
            lam = relax.l2(n.name)
            if lam != INF:
                r = state.Z[n.name] - sum(state.Y[e.name] for e in inc)
                out["L2"] += lam * float(np.sum(r * r))
        lam = relax.l3(n.name)
        obs = p.data.observed(n.name)
        if lam != INF and obs.any():
            r = state.Z[n.name][obs] - p.data.values[n.name][obs]
            out["L3"] += lam * float(np.sum(r * r))
    return out


def _check_shapes(p: CgcProblem, state: SolveState):
    N = p.n_samples
    for n in p.graph.nodes:
        z = state.Z.get(n.name)
        if z is None or np.shape(z) != (N, n.dim):
            raise ShapeMismatch(f"state for node {n.name!r} must have shape {(N, n.dim)}")
    for e in p.graph.edges:
        if e.is_wire:
            continue
        y = state.Y.get(e.name)
        if y is None or np.shape(y) != (N, p.graph.output_dim(e)):
            raise ShapeMismatch(f"state for edge {e.name!r} has the wrong shape")


def loss_L1(p: CgcProblem, state: SolveState) -> float:
    """Known-edge output mismatch ``sum lambda1 |f_e(Z_a) - Y_e|^2`` (finite weights)."""
    _check_shapes(p, state)
    return _terms_on_state(p, state)["L1"]


def loss_L2(p: CgcProblem, state: SolveState) -> float:
    """Node-sum mismatch ``sum lambda2 |Z_j - sum Y_e|^2`` (finite weights)."""
    _check_shapes(p, state)
    return _terms_on_state(p, state)["L2"]


def loss_L3(p: CgcProblem, state: SolveState) -> float:
    """Data mismatch ``sum lambda3 |Z - X|^2`` over observed entries (finite weights)."""
    _check_shapes(p, state)
    return _terms_on_state(p, state)["L3"]


def extract_models(p: CgcProblem, state: SolveState) -> dict[str, RepresenterModel]:
    return CgcObjective(p).extract_models(state)
