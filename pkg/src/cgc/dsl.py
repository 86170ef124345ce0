"""The ``.cgc`` text format: parse, lower to a problem, serialize.

A program is one ``graph NAME { ... }`` block of statements::

    node NAME : dim=D [random cov=V]
    aggregate NAME = (A, B, ...)
    edge NAME : A -> B unknown kernel=KSPEC [functionals=(value, dt, grad, laplacian)]
    edge NAME : A -> B unknown shares=EDGE [functionals=(...)]
    edge NAME : A -> B known fn=BUILTIN
    lambda1 EDGE = V
    lambda2 NODE = V
    lambda3 NODE = V
    data "file.csv"

``#`` starts a comment and whitespace (including newlines) only separates
tokens. ``shares=EDGE`` makes the edge another functional of the unknown
function introduced by ``EDGE`` and inherits its kernel. Weights accept
``inf`` for hard constraints. Names are unique across nodes, aggregates and
edges and may be used before they are declared.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._syntax import Cursor, Token, fmt_number, tokenize
from .errors import InputError, InvalidGraph, MissingKernel, ParseError, UnknownNode
from .graph_model import Edge, Graph, Known, Node, NodeKind, SampleSet, Unknown, Wire, validate
from .kernels import FUNCTIONAL_TAGS, kernel_from_call, parse_kernel
from .known import known_from_call, parse_known
from .solver import CgcProblem, RelaxationConfig

KEYWORDS = frozenset({"graph", "node", "aggregate", "edge", "lambda1", "lambda2", "lambda3",
                      "data", "unknown", "known", "random", "inf"})
DEFAULT_LAMBDA = 1000.0


@dataclass(frozen=True)
class NodeDecl:
    name: str
    dim: int
    cov: float | None = None  # isotropic covariance for random nodes
    pos: Token | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class AggregateDecl:
    name: str
    sources: tuple[str, ...]
    pos: Token | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class EdgeDecl:
    name: str
    source: str
    target: str
    known: bool
    kernel: str | None = None  # canonical kernel text
    fn: str | None = None  # canonical builtin text
    shares: str | None = None
    functionals: tuple[str, ...] = ()
    pos: Token | None = field(default=None, compare=False, repr=False)


@dataclass
class Program:
    name: str
    nodes: dict[str, NodeDecl] = field(default_factory=dict)
    aggregates: dict[str, AggregateDecl] = field(default_factory=dict)
    edges: dict[str, EdgeDecl] = field(default_factory=dict)
    lambda1: dict[str, float] = field(default_factory=dict)
    lambda2: dict[str, float] = field(default_factory=dict)
    lambda3: dict[str, float] = field(default_factory=dict)
    data: tuple[str, ...] = ()

    def names(self) -> set[str]:
        return set(self.nodes) | set(self.aggregates) | set(self.edges)


# --------------------------------------------------------------------------
# parsing


class _Parser:
    def __init__(self, text: str):
        self.cur = Cursor(tokenize(text))
        self.refs: list[tuple[str, Token, str]] = []  # (name, token, expected kind)

    def ident(self, what: str) -> Token:
        tok = self.cur.name(what)
        if tok.text in KEYWORDS:
            raise self.cur.error(f"{tok.text!r} is a reserved word", tok)
        return tok

    def program(self) -> Program:
        c = self.cur
        c.expect("graph")
        prog = Program(self.ident("graph name").text)
        c.expect("{")
        while not c.at("}"):
            if c.tok.kind == "eof":
                raise c.error("unterminated graph block, expected '}'")
            self.statement(prog)
        close = c.next()
        if c.tok.kind != "eof":
            raise c.error("only one graph block is allowed per file")
        self.resolve(prog, close)
        return prog

    def declare(self, prog: Program, tok: Token):
        if tok.text in prog.names():
            raise self.cur.error(f"duplicate identifier {tok.text!r}", tok)

    def statement(self, prog: Program):
        c = self.cur
        kw = c.tok
        if kw.kind != "name":
            raise c.error("expected a statement keyword")
        if kw.text == "node":
            c.next()
            name = self.ident("node name")
            self.declare(prog, name)
            c.expect(":")
            c.expect("dim")
            c.expect("=")
            dim_tok = c.tok
            dim = c.integer()
            if dim < 1:
                raise c.error("dim must be at least 1", dim_tok)
            cov = None
            if c.at("random"):
                c.next()
                c.expect("cov")
                c.expect("=")
                cov_tok = c.tok
                cov = c.number()
                if not (cov > 0 and np.isfinite(cov)):
                    raise c.error("cov must be a positive finite number", cov_tok)
            prog.nodes[name.text] = NodeDecl(name.text, dim, cov, name)
        elif kw.text == "aggregate":
            c.next()
            name = self.ident("aggregate name")
            self.declare(prog, name)
            c.expect("=")
            c.expect("(")
            srcs = []
            while True:
                s = self.ident("source node")
                self.refs.append((s.text, s, "node"))
                srcs.append(s.text)
                if c.at(")"):
                    break
                c.expect(",")
            c.next()
            prog.aggregates[name.text] = AggregateDecl(name.text, tuple(srcs), name)
        elif kw.text == "edge":
            c.next()
            self.edge(prog)
        elif kw.text in ("lambda1", "lambda2", "lambda3"):
            c.next()
            target = self.ident("edge name" if kw.text == "lambda1" else "node name")
            self.refs.append((target.text, target, "edge" if kw.text == "lambda1" else "node"))
            c.expect("=")
            vtok = c.tok
            v = c.number()
            if not v > 0:
                raise c.error("relaxation weights must be positive", vtok)
            table = getattr(prog, kw.text)
            if target.text in table:
                raise c.error(f"duplicate {kw.text} for {target.text!r}", target)
            table[target.text] = v
        elif kw.text == "data":
            c.next()
            tok = c.tok
            if tok.kind != "string":
                raise c.error("expected a quoted file name")
            c.next()
            prog.data = prog.data + (tok.text[1:-1],)
        else:
            raise c.error(f"unknown statement {kw.text!r}")

    def edge(self, prog: Program):
        c = self.cur
        name = self.ident("edge name")
        self.declare(prog, name)
        c.expect(":")
        src = self.ident("source node")
        c.expect("->")
        dst = self.ident("target node")
        self.refs += [(src.text, src, "node"), (dst.text, dst, "node")]
        kind = c.tok
        if c.at("known"):
            c.next()
            c.expect("fn")
            c.expect("=")
            fn = known_from_call(c.call())
            prog.edges[name.text] = EdgeDecl(name.text, src.text, dst.text, True, fn=fn.text, pos=name)
            return
        if not c.at("unknown"):
            raise c.error("expected 'known' or 'unknown'", kind)
        c.next()
        kernel = shares = None
        tags: tuple[str, ...] = ()
        seen = set()
        while c.tok.kind == "name" and c.tok.text in ("kernel", "shares", "functionals") and c.peek().text == "=":
            key = c.next()
            if key.text in seen:
                raise c.error(f"duplicate {key.text!r} option", key)
            seen.add(key.text)
            c.expect("=")
            if key.text == "kernel":
                kernel = kernel_from_call(c.call()).text
            elif key.text == "shares":
                ref = self.ident("edge name")
                self.refs.append((ref.text, ref, "shared"))
                shares = ref.text
            else:
                tags = self.tag_list()
        if kernel is None and shares is None:
            raise c.error("unknown edge needs kernel=KSPEC or shares=EDGE", name)
        if kernel is not None and shares is not None:
            raise c.error("an edge sharing a function inherits its kernel; drop kernel=", name)
        prog.edges[name.text] = EdgeDecl(name.text, src.text, dst.text, False, kernel, None, shares, tags, name)

    def tag_list(self) -> tuple[str, ...]:
        c = self.cur
        c.expect("(")
        tags = []
        while True:
            t = c.name("functional tag")
            if t.text not in FUNCTIONAL_TAGS:
                raise c.error(f"unknown functional tag {t.text!r}; expected one of {', '.join(FUNCTIONAL_TAGS)}", t)
            if t.text in tags:
                raise c.error(f"repeated functional tag {t.text!r}", t)
            tags.append(t.text)
            if c.at(")"):
                break
            c.expect(",")
        c.next()
        return tuple(tags)

    def resolve(self, prog: Program, close: Token):
        nodes = set(prog.nodes) | set(prog.aggregates)
        for name, tok, kind in self.refs:
            if kind == "node" and name not in nodes:
                what = "edge" if name in prog.edges else "undeclared node"
                raise ParseError(f"{what} {name!r} used where a node is expected"
                                 if what == "edge" else f"undeclared node {name!r}", tok.line, tok.col, name)
            if kind in ("edge", "shared") and name not in prog.edges:
                raise ParseError(f"undeclared edge {name!r}", tok.line, tok.col, name)
            if kind == "shared":
                base = prog.edges[name]
                if base.known or base.shares is not None:
                    raise ParseError(f"shares= must name an unknown edge that declares a kernel, not {name!r}",
                                     tok.line, tok.col, name)


def parse(text: str) -> Program:
    """Parse ``.cgc`` source; raises :class:`ParseError` at the first problem."""
    return _Parser(text).program()


# --------------------------------------------------------------------------
# serialization


def serialize(prog: Program) -> str:
    """Canonical text: statements grouped by kind, each group sorted by name.

    Data statements keep their declared order.
    """
    lines = [f"graph {prog.name} {{"]
    for n in sorted(prog.nodes.values(), key=lambda d: d.name):
        extra = f" random cov={fmt_number(n.cov)}" if n.cov is not None else ""
        lines.append(f"  node {n.name} : dim={n.dim}{extra}")
    for a in sorted(prog.aggregates.values(), key=lambda d: d.name):
        lines.append(f"  aggregate {a.name} = ({', '.join(a.sources)})")
    for e in sorted(prog.edges.values(), key=lambda d: d.name):
        head = f"  edge {e.name} : {e.source} -> {e.target}"
        if e.known:
            lines.append(f"{head} known fn={e.fn}")
            continue
        spec = f"kernel={e.kernel}" if e.shares is None else f"shares={e.shares}"
        tags = f" functionals=({', '.join(e.functionals)})" if e.functionals else ""
        lines.append(f"{head} unknown {spec}{tags}")
    for kw in ("lambda1", "lambda2", "lambda3"):
        for k, v in sorted(getattr(prog, kw).items()):
            lines.append(f"  {kw} {k} = {fmt_number(v)}")
    for d in prog.data:  # order matters: the first file is the one load() reads
        lines.append(f'  data "{d}"')
    lines.append("}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# lowering


def build_graph(prog: Program) -> Graph:
    nodes = []
    for n in prog.nodes.values():
        if n.cov is None:
            nodes.append(Node(n.name, NodeKind.PRIMAL, n.dim))
        else:
            nodes.append(Node(n.name, NodeKind.RANDOM, n.dim, n.cov * np.eye(n.dim)))
    dims = {n.name: n.dim for n in prog.nodes.values()}
    pending = dict(prog.aggregates)
    while pending:  # aggregates of aggregates need their sources' dims first
        ready = [a for a in pending.values() if all(s in dims for s in a.sources)]
        if not ready:
            raise InputError(f"aggregates {sorted(pending)} depend on each other cyclically")
        for a in ready:
            dims[a.name] = sum(dims[s] for s in a.sources)
            del pending[a.name]
    for a in prog.aggregates.values():
        nodes.append(Node(a.name, NodeKind.AGGREGATE, dims[a.name]))
    edges = []
    for e in prog.edges.values():
        if e.known:
            role = Known(parse_known(e.fn))
        else:
            role = Unknown(e.shares or e.name)
        edges.append(Edge(e.name, e.source, e.target, role, e.functionals))
    for a in prog.aggregates.values():
        for slot, s in enumerate(a.sources):
            edges.append(Edge(f"{a.name}[{slot}]", s, a.name, Wire(slot)))
    return Graph(tuple(nodes), tuple(edges))


def lower(prog: Program, data: SampleSet | None = None) -> CgcProblem:
    """Graph, kernels, weights (default 1000) and data as a :class:`CgcProblem`."""
    g = build_graph(prog)
    diags = validate(g)
    if diags:
        raise InvalidGraph(diags)
    kernels = {}
    for e in prog.edges.values():
        if not e.known and e.shares is None:
            if e.kernel is None:
                raise MissingKernel(f"edge {e.name!r} has no kernel")
            kernels[e.name] = parse_kernel(e.kernel)
    relax = RelaxationConfig(dict(prog.lambda1), dict(prog.lambda2), dict(prog.lambda3), DEFAULT_LAMBDA)
    return CgcProblem(g, kernels, bind_data(g, data), relax)


def bind_data(g: Graph, data: SampleSet | None) -> SampleSet:
    """Reorder ``data`` to the graph's node order; unmatched columns raise UnknownNode."""
    if data is None:
        return SampleSet.empty(g, 0)
    extra = [n for n in data.node_names if not g.has_node(n)]
    if extra:
        raise UnknownNode(f"data refers to undeclared node(s): {', '.join(extra)}")
    mask = np.zeros((data.n_samples, len(g.nodes)), dtype=bool)
    for n in data.node_names:
        mask[:, g.node_index(n)] = data.observed(n)
    for n, v in data.values.items():
        if v.shape[1] != g.node(n).dim:
            raise InputError(f"data for {n!r} has {v.shape[1]} components, node dim is {g.node(n).dim}")
    return SampleSet(g.node_names, dict(data.values), mask)


CSV_HEADER = ("sample", "node", "component", "value")


def read_samples(path, g: Graph) -> SampleSet:
    """Read long-format CSV ``sample,node,component,value``.

    A (sample, node) pair is observed when any of its rows is present; all
    components of an observed pair must be given.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [h for h in CSV_HEADER if h not in header]
        if missing:
            raise InputError(f"{path.name}: missing column(s) {', '.join(missing)} in CSV header")
        rows = []
        for lineno, r in enumerate(reader, start=2):
            try:
                rows.append((int(r["sample"]), r["node"].strip(), int(r["component"]), float(r["value"])))
            except (TypeError, ValueError):
                raise InputError(f"{path.name}:{lineno}: malformed row") from None
    n = max((r[0] for r in rows), default=-1) + 1
    values: dict[str, np.ndarray] = {}
    seen: dict[str, np.ndarray] = {}
    for s, node, comp, v in rows:
        if not g.has_node(node):
            raise UnknownNode(f"{path.name}: data refers to undeclared node {node!r}")
        d = g.node(node).dim
        if s < 0 or not 0 <= comp < d:
            raise InputError(f"{path.name}: bad sample/component index for node {node!r}")
        if node not in values:
            values[node] = np.full((n, d), np.nan)
            seen[node] = np.zeros((n, d), dtype=bool)
        values[node][s, comp] = v
        seen[node][s, comp] = True
    mask = np.zeros((n, len(g.nodes)), dtype=bool)
    for node, got in seen.items():
        obs = got.any(axis=1)
        if not got[obs].all():
            raise InputError(f"{path.name}: node {node!r} has partially observed samples")
        mask[:, g.node_index(node)] = obs
    return SampleSet(g.node_names, values, mask)


def write_samples(path, s: SampleSet) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for i in range(s.n_samples):
            for name in s.node_names:
                if name in s.values and s.observed(name)[i]:
                    for k, v in enumerate(s.values[name][i]):
                        w.writerow([i, name, k, repr(float(v))])


def load(path, data=None) -> CgcProblem:
    """Parse a ``.cgc`` file and lower it; ``data`` defaults to the file's own data statement."""
    path = Path(path)
    prog = parse(path.read_text())
    g = build_graph(prog)
    if data is None and prog.data:
        data = read_samples(path.parent / prog.data[0], g)
    return lower(prog, data)
