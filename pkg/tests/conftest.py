"""Shared graph builders for the test suite."""

from __future__ import annotations

import numpy as np

from hornbp import EdgeId, Factor, FactorGraph, FactorKind
from hornbp.schedule import UpdatePoset, edge_neighbors

P_DEFAULT = 0.999


def example_graph(p: float = P_DEFAULT) -> FactorGraph:
    """Two inputs feeding one conjunction: priors on v0 and v1, clause head v2.

    Five edges; P(v2=1) is exactly p^3, and the graph is a tree, so every
    strategy must agree with enumeration at convergence.
    """
    return FactorGraph(
        3,
        [
            Factor(FactorKind.AND, 0, (), p, p),
            Factor(FactorKind.AND, 1, (), p, p),
            Factor(FactorKind.AND, 2, (0, 1), p, 0.0),
        ],
    )


# Edge names for the example graph: factor a3 is index 2, head slot targets v2.
A1_V1 = EdgeId(0, 0)
A2_V2 = EdgeId(1, 0)
A3_V3 = EdgeId(2, 0)
A3_V1 = EdgeId(2, 1)
A3_V2 = EdgeId(2, 2)
EXAMPLE_SEQ_ORDER = [A1_V1, A2_V2, A3_V1, A3_V2, A3_V3]


def random_graph(
    rng: np.random.Generator,
    max_vars: int = 8,
    max_factors: int = 6,
    max_body: int = 3,
    or_prob: float = 0.4,
) -> FactorGraph:
    """Random valid graph mixing AND/OR factors; may be loopy."""
    n_vars = int(rng.integers(1, max_vars + 1))
    factors: list[Factor] = []
    covered = np.zeros(n_vars, dtype=bool)
    for _ in range(int(rng.integers(1, max_factors + 1))):
        head = int(rng.integers(0, n_vars))
        others = [v for v in range(n_vars) if v != head]
        rng.shuffle(others)
        body_size = int(rng.integers(0, min(max_body, len(others)) + 1))
        is_or = body_size > 0 and rng.random() < or_prob
        body = tuple(sorted(others[:body_size]))
        p1 = float(rng.uniform(0.05, 1.0))
        if body_size == 0:
            p2 = p1
        else:
            p2 = float(rng.uniform(0.0, 0.5))
        kind = FactorKind.OR if is_or else FactorKind.AND
        factors.append(Factor(kind, head, body, p1, p2))
        covered[head] = True
        for v in body:
            covered[v] = True
    for v in np.flatnonzero(~covered):
        p = float(rng.uniform(0.1, 0.9))
        factors.append(Factor(FactorKind.AND, int(v), (), p, p))
    return FactorGraph(n_vars, factors)


def random_tree(rng: np.random.Generator, max_vars: int = 12) -> FactorGraph:
    """Random tree-structured graph: each factor touches exactly one old variable."""
    n_vars = int(rng.integers(1, max_vars + 1))
    factors: list[Factor] = []
    p0 = float(rng.uniform(0.1, 0.9))
    factors.append(Factor(FactorKind.AND, 0, (), p0, p0))
    grown = 1
    while grown < n_vars:
        anchor = int(rng.integers(0, grown))
        fresh = min(int(rng.integers(1, 3)), n_vars - grown)
        new_vars = list(range(grown, grown + fresh))
        grown += fresh
        members = [anchor] + new_vars
        head = members[int(rng.integers(0, len(members)))]
        body = tuple(v for v in members if v != head)
        use_or = rng.random() < 0.4
        p1 = 1.0 if use_or else float(rng.uniform(0.5, 1.0))
        p2 = 0.0
        kind = FactorKind.OR if use_or else FactorKind.AND
        factors.append(Factor(kind, head, body, p1, p2))
    # A few extra priors keep marginals away from exact 0.5 ties.
    for v in range(n_vars):
        if rng.random() < 0.3:
            p = float(rng.uniform(0.2, 0.95))
            factors.append(Factor(FactorKind.AND, v, (), p, p))
    return FactorGraph(n_vars, factors)


def random_poset(
    rng: np.random.Generator, graph: FactorGraph, density: float = 0.5
) -> UpdatePoset:
    """Random legal order: pairs drawn consistent with a hidden permutation.

    Biased toward pairs the update actually reads (edge neighborhoods) so
    the scheduling constraints are non-trivial, plus a sprinkle of
    unrelated pairs.
    """
    edges = graph.edge_list()
    perm = list(edges)
    rng.shuffle(perm)
    position = {e: i for i, e in enumerate(perm)}
    pairs: list[tuple[EdgeId, EdgeId]] = []
    for e in edges:
        for other in edge_neighbors(graph, e):
            if position[other] < position[e] and rng.random() < density:
                pairs.append((other, e))
    for _ in range(int(rng.integers(0, len(edges) + 1))):
        i, j = (int(x) for x in rng.integers(0, len(edges), size=2))
        if i != j:
            pairs.append((perm[min(i, j)], perm[max(i, j)]))
    return UpdatePoset(graph, pairs)


def random_messages(rng: np.random.Generator, count: int) -> list[tuple[float, float]]:
    return [
        (float(rng.uniform(0.05, 1.0)), float(rng.uniform(0.05, 1.0)))
        for _ in range(count)
    ]
