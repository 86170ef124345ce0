from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import cgc
from cgc.applications.circuit import circuit_graph
from cgc.dsl import lower, load, parse, read_samples, serialize, write_samples
from cgc.errors import InputError, ParseError, UnknownNode
from cgc.graph_model import Graph, Node, SampleSet, validate

from dslgen import random_program

DATA = Path(cgc.__file__).parent / "data"
MINIMAL = "graph g { node x : dim=1 node y : dim=1 edge f : x -> y unknown kernel=gaussian(ls=1.0) }"


def test_minimal_program():
    prog = parse(MINIMAL)
    assert prog.name == "g"
    assert sorted(prog.nodes) == ["x", "y"] and list(prog.edges) == ["f"]
    e = prog.edges["f"]
    assert (e.source, e.target, e.known, e.kernel) == ("x", "y", False, "gaussian(ls=1.0)")


def test_undeclared_node_is_positioned():
    text = "graph g {\n  node x : dim=1\n  edge f : x -> q unknown kernel=gaussian(ls=1.0)\n}\n"
    with pytest.raises(ParseError) as info:
        parse(text)
    err = info.value
    assert "q" in str(err) and err.line == 3
    assert text.splitlines()[err.line - 1][err.column - 1:].startswith("q")


def test_circuit_program_lowers_to_valid_graph():
    p = load(DATA / "circuit.cgc")
    assert validate(p.graph) == []
    assert set(p.graph.node_names) == set(circuit_graph().node_names)
    assert p.n_samples > 0


def test_lower_defaults_and_overrides():
    p = lower(parse(MINIMAL))
    assert p.relax.l1("f") == p.relax.l2("y") == p.relax.l3("x") == 1000.0
    assert p.n_samples == 0
    q = lower(parse(MINIMAL.replace(" }", " lambda3 y = 500 }")))
    assert q.relax.l3("y") == 500.0 and q.relax.l3("x") == 1000.0
    g = Graph((Node("x"), Node("z")))
    with pytest.raises(UnknownNode):
        lower(parse(MINIMAL), SampleSet.from_columns(g, {"x": np.zeros(2), "z": np.zeros(2)}))


def test_serialize_is_canonical_and_idempotent():
    messy = "graph g {\n # a comment\n edge f:x->y unknown kernel=gaussian( ls = 1 )\n node y : dim=1\n node x:dim=1\n}"
    once = serialize(parse(messy))
    assert serialize(parse(once)) == once
    assert parse(once) == parse(messy)
    assert once.index("node x") < once.index("node y") < once.index("edge f")


def test_samples_round_trip(tmp_path):
    g = Graph((Node("x"), Node("y", dim=2)))
    rng = np.random.default_rng(0)
    s = SampleSet.from_columns(g, {"x": rng.standard_normal(4), "y": rng.standard_normal((4, 2))},
                               {"x": np.array([1, 0, 1, 1], bool), "y": np.array([0, 1, 1, 0], bool)})
    write_samples(tmp_path / "s.csv", s)
    back = read_samples(tmp_path / "s.csv", g)
    assert np.array_equal(back.mask, s.mask)
    for n in g.node_names:
        obs = s.observed(n)
        np.testing.assert_array_equal(back.values[n][obs], s.values[n][obs])


def test_malformed_csv_names_missing_column(tmp_path):
    (tmp_path / "bad.csv").write_text("sample,node,value\n0,x,1.0\n")
    with pytest.raises(InputError, match="component"):
        read_samples(tmp_path / "bad.csv", Graph((Node("x"),)))


@pytest.mark.parametrize("text", ["graph g { node x : dim=0 }", "graph g { node x : dim=1 node x : dim=1 }",
                                  "graph g { edge f : x -> y unknown kernel=gaussian(ls=1.0) }",
                                  "graph g { node x : dim=1 } graph h { }", "graph g { node x : dim=1"])
def test_parse_errors_are_deterministic(text):
    errs = []
    for _ in range(2):
        with pytest.raises(ParseError) as info:
            parse(text)
        e = info.value
        errs.append((str(e), e.line, e.column, e.token))
        lines = text.splitlines() or [""]
        assert 1 <= e.line <= len(lines) and 1 <= e.column <= len(lines[e.line - 1]) + 1
    assert errs[0] == errs[1]


# --------------------------------------------------------------------------
# properties


@settings(max_examples=150, deadline=None)
@given(seed=st.integers(0, 10 ** 7))
def test_fuzzed_programs_round_trip(seed):
    text, names = random_program(seed)
    prog = parse(text)
    assert set(prog.nodes) == names["nodes"]
    assert set(prog.aggregates) == names["aggregates"]
    assert set(prog.edges) == names["edges"]
    canon = serialize(prog)
    assert parse(canon) == prog
    assert serialize(parse(canon)) == canon


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10 ** 7))
def test_lowering_never_yields_invalid_problems(seed):
    text, _ = random_program(seed)
    try:
        p = lower(parse(text))
    except (InputError, ParseError) as exc:
        assert str(exc)
        return
    assert validate(p.graph) == []
