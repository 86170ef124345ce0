"""Graph of variables and functional dependencies, samples and masks.

Nodes are primal (the value is the sum of the incoming function outputs),
aggregate (the value is the ordered concatenation of the wired sources) or
random (a centred Gaussian source with a fixed covariance). Edges carry a
known builtin function, an unknown function to be recovered, or an
aggregation wire with an explicit slot index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Mapping, Union

import numpy as np

from .errors import InputError, MissingValue, ShapeMismatch
from .kernels import FUNCTIONAL_TAGS
from .known import KnownFn


class NodeKind(str, Enum):
    PRIMAL = "primal"
    AGGREGATE = "aggregate"
    RANDOM = "random"


@dataclass(frozen=True)
class NodeId:
    index: int
    name: str


@dataclass(frozen=True, eq=False)
class Node:
    name: str
    kind: NodeKind = NodeKind.PRIMAL
    dim: int = 1
    covariance: np.ndarray | None = None

    def __eq__(self, other):
        if not isinstance(other, Node):
            return NotImplemented
        same_cov = (self.covariance is None and other.covariance is None) or (
            self.covariance is not None
            and other.covariance is not None
            and np.array_equal(self.covariance, other.covariance)
        )
        return (self.name, self.kind, self.dim) == (other.name, other.kind, other.dim) and same_cov

    def __hash__(self):
        return hash((self.name, self.kind, self.dim))


@dataclass(frozen=True)
class Known:
    fn: KnownFn


@dataclass(frozen=True)
class Unknown:
    """An unknown function; edges naming the same ``function`` share it."""

    function: str


@dataclass(frozen=True)
class Wire:
    slot: int


Role = Union[Known, Unknown, Wire]


@dataclass(frozen=True)
class Edge:
    name: str
    source: str
    target: str
    role: Role
    functionals: tuple[str, ...] = ()

    @property
    def is_unknown(self) -> bool:
        return isinstance(self.role, Unknown)

    @property
    def is_known(self) -> bool:
        return isinstance(self.role, Known)

    @property
    def is_wire(self) -> bool:
        return isinstance(self.role, Wire)

    @property
    def tags(self) -> tuple[str, ...]:
        return self.functionals or ("value",)


@dataclass(frozen=True)
class Diagnostic:
    subject: str
    message: str

    def __str__(self):
        return f"{self.subject}: {self.message}"


@dataclass(frozen=True)
class Graph:
    nodes: tuple[Node, ...]
    edges: tuple[Edge, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))

    @cached_property
    def _node_index(self) -> dict[str, int]:
        return {n.name: i for i, n in enumerate(self.nodes)}

    @cached_property
    def _edge_index(self) -> dict[str, int]:
        return {e.name: i for i, e in enumerate(self.edges)}

    def node(self, name: str) -> Node:
        try:
            return self.nodes[self._node_index[name]]
        except KeyError:
            raise MissingValue(f"no node named {name!r}") from None

    def node_id(self, name: str) -> NodeId:
        return NodeId(self._node_index[name], name)

    def node_index(self, name: str) -> int:
        return self._node_index[name]

    def has_node(self, name: str) -> bool:
        return name in self._node_index

    def edge(self, name: str) -> Edge:
        return self.edges[self._edge_index[name]]

    def edge_id(self, name: str) -> int:
        return self._edge_index[name]

    @property
    def node_names(self) -> tuple[str, ...]:
        return tuple(n.name for n in self.nodes)

    def incoming(self, name: str) -> list[Edge]:
        """Function edges (known or unknown) ending at ``name``."""
        return [e for e in self.edges if e.target == name and not e.is_wire]

    def wires(self, name: str) -> list[Edge]:
        """Aggregation wires into ``name`` in slot order."""
        ws = [e for e in self.edges if e.target == name and e.is_wire]
        return sorted(ws, key=lambda e: e.role.slot)

    def unknown_functions(self) -> dict[str, list[Edge]]:
        groups: dict[str, list[Edge]] = {}
        for e in self.edges:
            if e.is_unknown:
                groups.setdefault(e.role.function, []).append(e)
        return groups

    def output_dim(self, e: Edge) -> int:
        """Dimension of the output produced by edge ``e`` on one sample."""
        src = self.node(e.source)
        if e.is_known:
            out = e.role.fn.out_dim(src.dim)
            return -1 if out is None else out
        if e.is_unknown and e.functionals:
            n = 0
            for tag in e.functionals:
                n += src.dim if tag == "grad" else 1
            return n
        return self.node(e.target).dim


def _psd_problem(cov, dim) -> str | None:
    if cov is None:
        return "random node needs a covariance"
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (dim, dim):
        return f"covariance shape {cov.shape} does not match dim {dim}"
    if not np.allclose(cov, cov.T, atol=1e-12):
        return "covariance is not symmetric"
    if np.min(np.linalg.eigvalsh(cov)) < -1e-12 * max(1.0, np.trace(cov)):
        return "covariance is not positive semi-definite"
    return None


def validate(graph: Graph) -> list[Diagnostic]:
    """Structural checks; an empty list means the graph is well formed."""
    out: list[Diagnostic] = []
    seen: set[str] = set()
    for n in graph.nodes:
        if not n.name:
            out.append(Diagnostic("<node>", "empty node name"))
        if n.name in seen:
            out.append(Diagnostic(n.name, "duplicate node name"))
        seen.add(n.name)
        if not isinstance(n.dim, (int, np.integer)) or n.dim < 1:
            out.append(Diagnostic(n.name, "dimension must be a positive integer"))
        if n.kind == NodeKind.RANDOM:
            problem = _psd_problem(n.covariance, n.dim)
            if problem:
                out.append(Diagnostic(n.name, problem))
        elif n.covariance is not None:
            out.append(Diagnostic(n.name, "only random nodes carry a covariance"))

    names = set(graph.node_names)
    seen_edges: set[str] = set()
    for e in graph.edges:
        if e.name in seen_edges:
            out.append(Diagnostic(e.name, "duplicate edge name"))
        seen_edges.add(e.name)
        bad = [x for x in (e.source, e.target) if x not in names]
        for x in bad:
            out.append(Diagnostic(e.name, f"endpoint {x!r} does not exist"))
        if bad:
            continue
        src, dst = graph.node(e.source), graph.node(e.target)
        if e.is_wire:
            if dst.kind != NodeKind.AGGREGATE:
                out.append(Diagnostic(e.name, "aggregation wires must end at an aggregate node"))
            continue
        if dst.kind == NodeKind.AGGREGATE:
            out.append(Diagnostic(e.name, "function edges cannot end at an aggregate node"))
            continue
        if e.is_unknown:
            if dst.kind != NodeKind.PRIMAL:
                out.append(Diagnostic(e.name, "unknown edges must end at a primal node"))
            for tag in e.functionals:
                if tag not in FUNCTIONAL_TAGS:
                    out.append(Diagnostic(e.name, f"unknown functional tag {tag!r}"))
            if "dt" in e.functionals and src.dim != 1:
                out.append(Diagnostic(e.name, "dt functional needs a one-dimensional source"))
        elif e.functionals:
            out.append(Diagnostic(e.name, "only unknown edges carry functionals"))
        od = graph.output_dim(e)
        if od < 0:
            out.append(Diagnostic(e.name, f"{e.role.fn.text} cannot act on dimension {src.dim}"))
        elif od != dst.dim:
            out.append(Diagnostic(e.name, f"output dimension {od} does not match node dim {dst.dim}"))

    for fn, members in graph.unknown_functions().items():
        if fn not in seen_edges or not graph.edge(fn).is_unknown or graph.edge(fn).role.function != fn:
            out.append(Diagnostic(fn, "shared function must name its own primary unknown edge"))
            continue
        if len({m.source for m in members}) > 1:
            out.append(Diagnostic(fn, "edges sharing a function must have the same source"))
        if len(members) > 1:
            for m in members:
                if not m.functionals and m.target in names and graph.node(m.target).dim != 1:
                    out.append(Diagnostic(m.name, "shared functions must be scalar-valued"))

    for n in graph.nodes:
        if n.kind != NodeKind.AGGREGATE:
            continue
        ws = graph.wires(n.name)
        if not ws:
            out.append(Diagnostic(n.name, "aggregate node has no incoming wires"))
            continue
        slots = [w.role.slot for w in ws]
        if slots != list(range(len(ws))):
            out.append(Diagnostic(n.name, f"wire slots {slots} are not a contiguous 0-based ordering"))
        total = sum(graph.node(w.source).dim for w in ws if w.source in names)
        if total != n.dim:
            out.append(Diagnostic(n.name, f"dim {n.dim} differs from summed source dims {total}"))
    return out


# --------------------------------------------------------------------------
# samples


@dataclass
class SampleSet:
    """Values of ``N`` samples for every node plus a per-node observation mask."""

    node_names: tuple[str, ...]
    values: dict[str, np.ndarray]
    mask: np.ndarray

    def __post_init__(self):
        self.node_names = tuple(self.node_names)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.ndim != 2 or self.mask.shape[1] != len(self.node_names):
            raise ShapeMismatch(f"mask shape {self.mask.shape} does not match {len(self.node_names)} nodes")
        n = self.mask.shape[0]
        vals = {}
        for j, name in enumerate(self.node_names):
            v = self.values.get(name)
            if v is None:
                if self.mask[:, j].any():
                    raise MissingValue(f"node {name!r} is observed but has no values")
                continue
            v = np.asarray(v, dtype=float)
            if v.ndim == 1:
                v = v[:, None]
            if v.shape[0] != n:
                raise ShapeMismatch(f"node {name!r} has {v.shape[0]} rows, expected {n}")
            if not np.all(np.isfinite(v[self.mask[:, j]])):
                raise InputError(f"node {name!r} has non-finite observed values")
            vals[name] = v
        self.values = vals

    @property
    def n_samples(self) -> int:
        return self.mask.shape[0]

    def observed(self, name: str) -> np.ndarray:
        return self.mask[:, self.node_names.index(name)]

    def column(self, name: str, dim: int) -> np.ndarray:
        """Values of ``name`` with unobserved rows set to NaN."""
        out = np.full((self.n_samples, dim), np.nan)
        if name in self.values:
            obs = self.observed(name)
            out[obs] = self.values[name][obs]
        return out

    @classmethod
    def empty(cls, graph: Graph, n: int = 0) -> "SampleSet":
        return cls(graph.node_names, {}, np.zeros((n, len(graph.nodes)), dtype=bool))

    @classmethod
    def from_columns(cls, graph: Graph, values: Mapping[str, np.ndarray],
                     observed: Mapping[str, np.ndarray] | None = None, n: int | None = None) -> "SampleSet":
        """Build a sample set; nodes with values default to fully observed."""
        if n is None:
            n = len(next(iter(values.values()))) if values else 0
        mask = np.zeros((n, len(graph.nodes)), dtype=bool)
        for name in values:
            if not graph.has_node(name):
                raise MissingValue(f"no node named {name!r}")
            m = np.ones(n, bool) if observed is None or name not in observed else np.asarray(observed[name], bool)
            mask[:, graph.node_index(name)] = m
        return cls(graph.node_names, dict(values), mask)


@dataclass(frozen=True)
class SampleCheck:
    residuals: dict[str, float]
    ok: bool


def _row(sample: Mapping[str, np.ndarray], name: str, dim: int) -> np.ndarray:
    if name not in sample:
        raise MissingValue(f"no value for node {name!r}")
    v = np.atleast_1d(np.asarray(sample[name], dtype=float)).ravel()
    if v.size != dim:
        raise ShapeMismatch(f"node {name!r} expects {dim} values, got {v.size}")
    return v


def check_sample(graph: Graph, sample: Mapping[str, np.ndarray], tol: float = 1e-8) -> SampleCheck:
    """Residuals of the known relations at one sample.

    Square nodes whose incoming edges are all known report
    ``|x_j - sum_e f_e(x_a(e))|``; aggregate nodes report the mismatch with
    the concatenation of their sources.
    """
    res: dict[str, float] = {}
    for n in graph.nodes:
        if n.kind == NodeKind.AGGREGATE:
            parts = [_row(sample, w.source, graph.node(w.source).dim) for w in graph.wires(n.name)]
            x = _row(sample, n.name, n.dim)
            res[n.name] = float(np.linalg.norm(x - np.concatenate(parts)))
            continue
        inc = graph.incoming(n.name)
        if not inc or any(not e.is_known for e in inc):
            continue
        total = np.zeros(n.dim)
        for e in inc:
            xa = _row(sample, e.source, graph.node(e.source).dim)
            total += e.role.fn(xa[None, :])[0]
        res[n.name] = float(np.linalg.norm(_row(sample, n.name, n.dim) - total))
    return SampleCheck(res, all(v <= tol for v in res.values()))


def evaluate_forward(graph: Graph, sources: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Propagate source values through known edges and aggregates of an acyclic graph."""
    values = {k: np.atleast_1d(np.asarray(v, dtype=float)) for k, v in sources.items()}
    pending = [n for n in graph.nodes if n.name not in values]
    while pending:
        progressed = False
        for n in list(pending):
            if n.kind == NodeKind.AGGREGATE:
                deps = [w.source for w in graph.wires(n.name)]
                if all(d in values for d in deps):
                    values[n.name] = np.concatenate([values[d] for d in deps])
                    pending.remove(n)
                    progressed = True
                continue
            inc = graph.incoming(n.name)
            if any(not e.is_known for e in inc):
                raise InputError(f"node {n.name!r} depends on an unknown function")
            if not inc:
                raise MissingValue(f"no value for source node {n.name!r}")
            if all(e.source in values for e in inc):
                values[n.name] = sum(e.role.fn(values[e.source][None, :])[0] for e in inc)
                pending.remove(n)
                progressed = True
        if not progressed:
            raise InputError("graph has a cycle; forward evaluation needs an acyclic graph")
    return values


def mask_split(s: SampleSet):
    """``(observed, hidden)``: observed values keyed by (sample, node) and the hidden keys."""
    observed: dict[tuple[int, str], np.ndarray] = {}
    hidden: set[tuple[int, str]] = set()
    for j, name in enumerate(s.node_names):
        for i in range(s.n_samples):
            if s.mask[i, j]:
                observed[(i, name)] = s.values[name][i].copy()
            else:
                hidden.add((i, name))
    return observed, hidden
