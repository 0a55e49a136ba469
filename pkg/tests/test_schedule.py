"""Posets, dependency batching, companion batches, and the delta indicator."""

import numpy as np
import pytest

from conftest import (
    A1_V1,
    A2_V2,
    A3_V1,
    A3_V2,
    A3_V3,
    EXAMPLE_SEQ_ORDER,
    example_graph,
    random_graph,
    random_poset,
)
from hornbp import EdgeId, Factor, FactorGraph, FactorKind
from hornbp.schedule import (
    ScheduleError,
    Strategy,
    UpdatePoset,
    compile_schedule,
    delta,
    dependency_analysis,
    edge_neighbors,
    group_var_to_factor,
    parall_poset,
    seqfix_poset,
    topo_poset,
    verify_batches,
)


def test_edge_neighbors_on_example_graph():
    g = example_graph()
    assert edge_neighbors(g, A3_V1) == {A2_V2}
    assert edge_neighbors(g, A1_V1) == set()
    assert edge_neighbors(g, A3_V3) == {A1_V1, A2_V2}


def test_parall_poset_has_no_pairs():
    poset = parall_poset(example_graph())
    assert poset.pairs == ()
    assert not poset.has_order


def test_seqfix_poset_is_total_order():
    g = example_graph()
    poset = seqfix_poset(g, EXAMPLE_SEQ_ORDER)
    for i, earlier in enumerate(EXAMPLE_SEQ_ORDER):
        for later in EXAMPLE_SEQ_ORDER[i + 1 :]:
            assert poset.precedes(earlier, later)
            assert not poset.precedes(later, earlier)


def test_seqfix_requires_permutation():
    g = example_graph()
    with pytest.raises(ScheduleError):
        seqfix_poset(g, [A1_V1, A2_V2])
    with pytest.raises(ScheduleError):
        seqfix_poset(g, EXAMPLE_SEQ_ORDER[:-1] + [A1_V1])


def test_poset_rejects_cycles_and_self_pairs():
    g = example_graph()
    with pytest.raises(ScheduleError, match="cycle"):
        UpdatePoset(g, [(A1_V1, A2_V2), (A2_V2, A1_V1)])
    with pytest.raises(ScheduleError):
        UpdatePoset(g, [(A1_V1, A1_V1)])


def test_dependency_analysis_parall_single_batch():
    g = example_graph()
    batches = dependency_analysis(parall_poset(g))
    assert len(batches) == 1
    assert sorted(batches[0]) == g.edge_list()


def test_dependency_analysis_fixed_order_two_batches():
    g = example_graph()
    batches = dependency_analysis(seqfix_poset(g, EXAMPLE_SEQ_ORDER))
    assert [sorted(b) for b in batches] == [
        sorted([A1_V1, A2_V2]),
        sorted([A3_V1, A3_V2, A3_V3]),
    ]


def test_dependency_analysis_merges_unrelated_edges():
    # Two disconnected priors: a total order still packs one batch because
    # neither message feeds the other.
    g = FactorGraph(
        2,
        [
            Factor(FactorKind.AND, 0, (), 0.7, 0.7),
            Factor(FactorKind.AND, 1, (), 0.6, 0.6),
        ],
    )
    batches = dependency_analysis(seqfix_poset(g))
    assert len(batches) == 1


def _chained_graph_and_order():
    """Three overlapping conjunctions whose messages form one feed chain.

    u,w feed both x's and y's clauses; x,y feed z's clause. The returned
    fixed order makes every consecutive message read the previous one, so
    batching degenerates to singletons.
    """
    g = FactorGraph(
        5,
        [
            Factor(FactorKind.AND, 2, (0, 1), 0.9, 0.0),
            Factor(FactorKind.AND, 3, (0, 1), 0.8, 0.0),
            Factor(FactorKind.AND, 4, (2, 3), 0.7, 0.0),
        ],
    )
    order = [
        EdgeId(2, 1),
        EdgeId(0, 2),
        EdgeId(1, 1),
        EdgeId(0, 0),
        EdgeId(2, 2),
        EdgeId(1, 2),
        EdgeId(0, 1),
        EdgeId(1, 0),
        EdgeId(2, 0),
    ]
    return g, order


def test_fully_chained_order_gives_singleton_batches():
    g, order = _chained_graph_and_order()
    for earlier, later in zip(order, order[1:]):
        assert earlier in edge_neighbors(g, later)
    batches = dependency_analysis(seqfix_poset(g, order))
    assert len(batches) == g.num_edges
    assert all(len(b) == 1 for b in batches)


def test_group_var_to_factor_examples():
    g = example_graph()
    t = group_var_to_factor(g, [[A3_V1]])
    assert t == [[A3_V3, A3_V2]] or t == [sorted([A3_V3, A3_V2])]
    assert group_var_to_factor(g, [[A1_V1, A2_V2]]) == [[]]
    t_full = group_var_to_factor(g, [[A3_V1, A3_V2, A3_V3]])
    assert t_full == [sorted([A3_V3, A3_V1, A3_V2])]


def test_delta_examples():
    g = example_graph()
    p_parall = parall_poset(g)
    edges = g.edge_list()
    assert all(delta(p_parall, e1, e2) == 0 for e1 in edges for e2 in edges)
    p_seq = seqfix_poset(g, EXAMPLE_SEQ_ORDER)
    assert delta(p_seq, A3_V1, A2_V2) == 1
    assert delta(p_seq, A2_V2, A3_V1) == 0
    assert all(delta(p_seq, e, e) == 0 for e in edges)


def test_delta_ignores_non_feeding_pairs():
    g = example_graph()
    p_seq = seqfix_poset(g, EXAMPLE_SEQ_ORDER)
    # a1's message precedes a3->v2's in the order but does not feed it
    # within one hop, so the indicator stays 0 even though order holds.
    assert p_seq.precedes(A1_V1, A3_V1)
    assert A1_V1 not in edge_neighbors(g, A3_V1)
    assert delta(p_seq, A3_V1, A1_V1) == 0


def test_no_cyclic_delta_dependencies_on_random_posets():
    rng = np.random.default_rng(3)
    for _ in range(30):
        g = random_graph(rng)
        poset = random_poset(rng, g)
        edges = g.edge_list()
        succ = {
            e1: [e2 for e2 in edge_neighbors(g, e1) if delta(poset, e1, e2) == 1]
            for e1 in edges
        }
        color = {}

        def acyclic(node):
            color[node] = 1
            for nxt in succ[node]:
                state = color.get(nxt, 0)
                if state == 1:
                    return False
                if state == 0 and not acyclic(nxt):
                    return False
            color[node] = 2
            return True

        assert all(acyclic(e) for e in edges if color.get(e, 0) == 0)


def test_batches_partition_edges_and_respect_order():
    rng = np.random.default_rng(5)
    for _ in range(40):
        g = random_graph(rng)
        poset = random_poset(rng, g)
        batches = dependency_analysis(poset)
        flat = [e for b in batches for e in b]
        assert sorted(flat) == g.edge_list()
        assert len(set(flat)) == len(flat)
        assert verify_batches(poset, batches) == []


def test_topo_two_pass_order_on_path():
    # Chain v0 - f0 - v1 - f1 - v2. Inward messages (toward v0) come first
    # and outward updates depend on them where a feed exists.
    g = FactorGraph(
        3,
        [
            Factor(FactorKind.AND, 1, (0,), 0.9, 0.0),
            Factor(FactorKind.AND, 2, (1,), 0.8, 0.0),
        ],
    )
    poset = topo_poset(g)
    inward_deep = EdgeId(1, 1)  # f1 -> v1
    inward_root = EdgeId(0, 1)  # f0 -> v0
    outward_first = EdgeId(0, 0)  # f0 -> v1
    outward_last = EdgeId(1, 0)  # f1 -> v2
    assert poset.precedes(inward_deep, inward_root)
    assert poset.precedes(outward_first, outward_last)
    batches = dependency_analysis(poset)
    index = {e: i for i, b in enumerate(batches) for e in b}
    assert index[inward_deep] < index[inward_root]
    assert index[outward_first] < index[outward_last]


def test_topo_rejects_loopy_graph():
    g = FactorGraph(
        2,
        [
            Factor(FactorKind.AND, 0, (1,), 0.9, 0.0),
            Factor(FactorKind.OR, 0, (1,), 1.0, 0.0),
        ],
    )
    with pytest.raises(ScheduleError, match="cycle"):
        topo_poset(g)


def test_topo_handles_forests():
    g = FactorGraph(
        4,
        [
            Factor(FactorKind.AND, 1, (0,), 0.9, 0.0),
            Factor(FactorKind.AND, 3, (2,), 0.8, 0.0),
        ],
    )
    batches = dependency_analysis(topo_poset(g))
    assert sorted(e for b in batches for e in b) == g.edge_list()


def test_compile_schedule_aligns_batches():
    g = example_graph()
    schedule = compile_schedule(g, seqfix_poset(g, EXAMPLE_SEQ_ORDER))
    assert schedule.num_batches == 2
    assert len(schedule.s_batches) == len(schedule.t_batches)
    assert schedule.t_batches[0] == ()
    assert sorted(schedule.t_batches[1]) == sorted([A3_V3, A3_V1, A3_V2])


def test_strategy_file_round_trip():
    g = example_graph()
    text = "strategy SEQFIX\n" + "\n".join(f"edge {e}" for e in EXAMPLE_SEQ_ORDER)
    strategy = Strategy.from_text(text)
    assert strategy.kind == "SEQFIX"
    assert list(strategy.order) == EXAMPLE_SEQ_ORDER
    assert strategy.compile(g).num_batches == 2

    custom = Strategy.from_text("strategy CUSTOM\nbefore 1:0 2:1\n")
    poset = custom.build_poset(g)
    assert poset.precedes(A2_V2, A3_V1)

    assert Strategy.from_text("strategy PARALL\n").compile(g).num_batches == 1


@pytest.mark.parametrize(
    "text",
    [
        "",
        "strategy WAT\n",
        "strategy PARALL\nedge 0:0\n",
        "strategy SEQFIX\nbefore 0:0 1:0\n",
        "strategy CUSTOM\nbefore 0:0\n",
        "strategy SEQFIX\nedge zero\n",
    ],
)
def test_strategy_file_errors(text):
    with pytest.raises(ScheduleError):
        Strategy.from_text(text)


def test_builtin_strategy_names():
    assert Strategy.from_name("parall").kind == "PARALL"
    with pytest.raises(ScheduleError):
        Strategy.from_name("CUSTOM")
    with pytest.raises(ScheduleError):
        Strategy.from_name("BESTEFFORT")


def test_compilation_is_deterministic():
    rng = np.random.default_rng(9)
    g = random_graph(rng, max_vars=10, max_factors=8)
    pairs = random_poset(rng, g).pairs
    first = compile_schedule(g, UpdatePoset(g, pairs))
    second = compile_schedule(g, UpdatePoset(g, pairs))
    assert first == second
