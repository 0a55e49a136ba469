"""Factor graph model, FASTFG parsing, DAG conversion, evidence clamping."""

import pytest

from conftest import example_graph
from hornbp import (
    DagNode,
    EdgeId,
    Factor,
    FactorGraph,
    FactorKind,
    FormatError,
    GraphError,
    clamp_evidence,
    from_bayesian_dag,
    parse_dag,
    parse_fastfg,
)
from hornbp.oracle import exact_marginals
from hornbp.schedule import Strategy
import hornbp


BASIC = """FASTFG 1
vars 3
factor AND 0.999 0.0 head=2 body=0,1
"""


def test_parse_single_and_factor():
    g = parse_fastfg(BASIC)
    assert g.num_variables == 3
    assert g.num_factors == 1
    assert g.num_edges == 3
    f = g.factors[0]
    assert f.kind is FactorKind.AND
    assert f.head == 2
    assert f.body == (0, 1)
    assert (f.p1, f.p2) == (0.999, 0.0)


def test_parse_prior_factor_empty_body():
    g = parse_fastfg("FASTFG 1\nvars 1\nfactor AND 0.999 0.999 head=0 body=\n")
    f = g.factors[0]
    assert f.body == ()
    assert f.arity == 0
    assert f.p1 == f.p2 == 0.999


def test_parse_comments_and_blanks():
    text = "# preamble\nFASTFG 1\n\nvars 2  # two variables\nfactor OR 1.0 0.0 head=0 body=1\nfactor AND 0.5 0.5 head=1 body=\n"
    g = parse_fastfg(text)
    assert g.num_variables == 2
    assert g.factors[0].kind is FactorKind.OR


def test_parse_out_of_range_head_reports_line():
    text = "FASTFG 1\nvars 3\nfactor AND 0.9 0.0 head=5 body=0\n"
    with pytest.raises(FormatError) as err:
        parse_fastfg(text)
    assert err.value.line == 3
    assert "out of range" in str(err.value)


@pytest.mark.parametrize(
    "line,fragment",
    [
        ("factor NAND 0.9 0.0 head=0 body=1", "kind"),
        ("factor AND 1.5 0.0 head=0 body=1", "probability"),
        ("factor AND 0.9 0.0 head=0 body=1,1", "duplicate"),
        ("factor AND 0.9 0.0 head=0 body=0", "head"),
        ("factor AND 0.9 0.0 head=0", "expected"),
        ("nonsense", "expected"),
    ],
)
def test_parse_bad_factor_lines(line, fragment):
    text = f"FASTFG 1\nvars 2\n{line}\n"
    with pytest.raises(FormatError) as err:
        parse_fastfg(text)
    assert err.value.line == 3
    assert fragment in str(err.value).lower()


def test_parse_missing_header():
    with pytest.raises(FormatError):
        parse_fastfg("vars 2\n")


def test_round_trip_serialization():
    g = example_graph()
    again = parse_fastfg(g.to_fastfg())
    assert again.num_variables == g.num_variables
    assert again.factors == g.factors
    assert again.num_edges == g.num_edges


def test_validation_rejects_empty_or():
    with pytest.raises(GraphError, match="OR factor with empty body"):
        FactorGraph(1, [Factor(FactorKind.OR, 0, (), 1.0, 0.0)])


def test_validation_rejects_prior_with_unequal_probs():
    with pytest.raises(GraphError, match="p1 == p2"):
        FactorGraph(1, [Factor(FactorKind.AND, 0, (), 0.9, 0.1)])


def test_validation_rejects_orphan_variable():
    with pytest.raises(GraphError, match="no factor"):
        FactorGraph(2, [Factor(FactorKind.AND, 0, (), 0.5, 0.5)])


def test_validation_rejects_head_in_body():
    with pytest.raises(GraphError, match="head"):
        FactorGraph(2, [Factor(FactorKind.AND, 0, (0, 1), 0.9, 0.0)])


def test_edge_enumeration_and_variables():
    g = example_graph()
    edges = g.edge_list()
    assert edges == [EdgeId(0, 0), EdgeId(1, 0), EdgeId(2, 0), EdgeId(2, 1), EdgeId(2, 2)]
    assert g.num_edges == sum(f.degree for f in g.factors) == 5
    assert [g.variable_of(e) for e in edges] == [0, 1, 2, 0, 1]


def test_adjacency_is_inverse_of_membership():
    g = example_graph()
    for var, entries in enumerate(g.adjacency):
        for fi, slot in entries:
            assert g.variable_of(EdgeId(fi, slot)) == var
    assert sum(len(entries) for entries in g.adjacency) == g.num_edges


# DAG conversion


def test_dag_two_inputs_one_clause_matches_example_shape():
    p = 0.999
    nodes = [
        DagNode("v1", "input", p),
        DagNode("v2", "input", p),
        DagNode("v3", "clause", p),
    ]
    g = from_bayesian_dag(nodes, [("v1", "v3"), ("v2", "v3")])
    assert g.num_variables == 3
    a1, a2, a3 = g.factors
    assert a1 == Factor(FactorKind.AND, 0, (), p, p)
    assert a2 == Factor(FactorKind.AND, 1, (), p, p)
    assert a3.kind is FactorKind.AND
    assert a3.head == 2
    assert a3.body == (0, 1)
    assert (a3.p1, a3.p2) == (p, 0.0)
    assert g.names == ("v1", "v2", "v3")


def test_dag_single_input_smallest_case():
    g = from_bayesian_dag([DagNode("t", "input", 0.7)], [])
    assert g.num_factors == 1
    assert g.factors[0] == Factor(FactorKind.AND, 0, (), 0.7, 0.7)


def test_dag_tuple_with_two_deriving_clauses_becomes_or():
    nodes = [
        DagNode("i", "input", 0.9),
        DagNode("c1", "clause", 0.9),
        DagNode("c2", "clause", 0.9),
        DagNode("t", "tuple"),
    ]
    edges = [("i", "c1"), ("i", "c2"), ("c1", "t"), ("c2", "t")]
    g = from_bayesian_dag(nodes, edges)
    or_factor = g.factors[3]
    assert or_factor.kind is FactorKind.OR
    assert or_factor.head == 3
    assert sorted(or_factor.body) == [1, 2]
    assert (or_factor.p1, or_factor.p2) == (1.0, 0.0)


def test_dag_one_factor_per_node_and_edge_count():
    nodes = [
        DagNode("i1", "input", 0.9),
        DagNode("i2", "input", 0.9),
        DagNode("c1", "clause", 0.9),
        DagNode("t1", "tuple"),
    ]
    edges = [("i1", "c1"), ("i2", "c1"), ("c1", "t1")]
    g = from_bayesian_dag(nodes, edges)
    assert g.num_factors == len(nodes)
    assert g.num_edges == len(edges) + len(nodes)


def test_dag_default_probability_applied():
    g = from_bayesian_dag(
        [DagNode("i", "input"), DagNode("c", "clause")], [("i", "c")]
    )
    assert g.factors[0].p1 == 0.999
    assert g.factors[1].p1 == 0.999


@pytest.mark.parametrize(
    "nodes,edges,fragment",
    [
        (
            [DagNode("a", "input", 0.9), DagNode("b", "clause", 0.9)],
            [("a", "b"), ("b", "a")],
            "cycle",
        ),
        ([DagNode("t", "tuple")], [], "no deriving clause"),
        ([DagNode("c", "clause", 0.9)], [], "no premises"),
        (
            [DagNode("i", "input", 0.9), DagNode("j", "input", 0.9)],
            [("i", "j")],
            "premises",
        ),
        ([DagNode("t", "tuple", 0.9)], [], "no probability"),
    ],
)
def test_dag_validation_errors(nodes, edges, fragment):
    with pytest.raises(GraphError, match=fragment):
        from_bayesian_dag(nodes, edges)


def test_parse_dag_text_format():
    text = """# derivation
node i1 input p=0.9
node c1 clause p=0.8
node t1 tuple
edge i1 c1
edge c1 t1
"""
    g = parse_dag(text)
    assert g.num_variables == 3
    assert g.factors[1].p1 == 0.8
    assert g.factors[2].kind is FactorKind.OR


# Evidence clamping


def test_clamp_appends_single_prior_factor():
    g = example_graph()
    clamped = clamp_evidence(g, 1, True)
    assert clamped.num_factors == g.num_factors + 1
    pin = clamped.factors[-1]
    assert pin.arity == 0
    assert pin.p1 == pin.p2 == 1.0
    assert clamp_evidence(g, 1, False).factors[-1].p1 == 0.0
    assert g.num_factors == 3  # original untouched


def test_clamp_preserves_existing_edge_positions():
    from hornbp.storage import initialize

    g = example_graph()
    before = initialize(g)
    after = initialize(clamp_evidence(g, 0, True))
    for e in g.edges():
        assert before.vtof_index(e) == after.vtof_index(e)


def test_clamp_false_premise_kills_conclusion():
    g = clamp_evidence(example_graph(), 0, False)
    exact = exact_marginals(g)
    assert exact[2, 1] == pytest.approx(0.0, abs=1e-12)
    result = hornbp.run(g, Strategy.parall().compile(g))
    assert result.marginals[2, 1] == pytest.approx(0.0, abs=1e-9)


def test_clamp_out_of_range():
    with pytest.raises(GraphError):
        clamp_evidence(example_graph(), 7, True)
