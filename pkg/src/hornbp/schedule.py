"""Update strategies as strict partial orders over edges, compiled to batches.

A strategy says, for each factor-to-variable message, which other messages
must already hold their current-iteration values when it is computed. That
is captured as a strict partial order over the edge set: ``e' < e`` means
the message on ``e'`` is updated before the one on ``e`` within an
iteration.

Compilation topologically sorts the edges (breadth-first layers over the
ordering pairs, ties broken by ascending edge id) and then greedily packs
consecutive edges into batches: a new batch starts exactly when an edge
depends on a message already placed in the current batch. Messages within a
batch are safe to update in parallel; every ordered dependency lands in an
earlier batch.

Each factor-to-variable batch ``s_i`` gets a companion variable-to-factor
batch ``t_i`` holding the messages its updates read.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .graph import EdgeId, FactorGraph, GraphError

STRATEGY_NAMES = ("PARALL", "SEQFIX", "TOPO", "CUSTOM")


class ScheduleError(ValueError):
    """Invalid strategy, ordering relation, or schedule."""


def edge_neighbors(graph: FactorGraph, edge: EdgeId) -> set[EdgeId]:
    """Edges whose factor-to-variable messages can feed this edge's update.

    For edge (a, v) these are the edges (a*, v*) with v* another neighbor
    of a and a* another factor of v*: the message on (a, v) is computed
    from variable-to-factor messages out of each such v*, which in turn
    multiply the factor-to-variable messages on those (a*, v*).
    """
    graph.check_edge(edge)
    factor = graph.factors[edge.factor]
    result: set[EdgeId] = set()
    for slot, var in enumerate(factor.variables()):
        if slot == edge.slot:
            continue
        for other_factor, other_slot in graph.adjacency[var]:
            if other_factor != edge.factor:
                result.add(EdgeId(other_factor, other_slot))
    return result


class UpdatePoset:
    """Strict partial order over a graph's edges, given as ordering pairs.

    The relation is the transitive closure of ``pairs``; construction
    rejects cycles. ``rank`` is an optional total-order shortcut: when
    given, ``precedes`` compares ranks instead of walking the pair graph
    (used for fixed-sequence strategies, where the closure is exactly the
    rank comparison).
    """

    def __init__(
        self,
        graph: FactorGraph,
        pairs: Iterable[tuple[EdgeId, EdgeId]],
        rank: Optional[dict[EdgeId, int]] = None,
    ):
        self.graph = graph
        unique_pairs: list[tuple[EdgeId, EdgeId]] = []
        seen: set[tuple[EdgeId, EdgeId]] = set()
        for before, after in pairs:
            graph.check_edge(before)
            graph.check_edge(after)
            if before == after:
                raise ScheduleError(f"edge {before} cannot precede itself")
            key = (before, after)
            if key not in seen:
                seen.add(key)
                unique_pairs.append(key)
        self.pairs: tuple[tuple[EdgeId, EdgeId], ...] = tuple(unique_pairs)
        self._rank = rank

        self._succ: dict[EdgeId, list[EdgeId]] = {}
        self._pred: dict[EdgeId, list[EdgeId]] = {}
        for before, after in self.pairs:
            self._succ.setdefault(before, []).append(after)
            self._pred.setdefault(after, []).append(before)
        self._ancestor_cache: dict[EdgeId, frozenset[EdgeId]] = {}
        self._sorted = self._toposort_layers()

    def _toposort_layers(self) -> list[EdgeId]:
        """Breadth-first layered topological sort, ascending edge id in a layer."""
        edges = self.graph.edge_list()
        indegree = {e: 0 for e in edges}
        for _, after in self.pairs:
            indegree[after] += 1
        layer = sorted(e for e in edges if indegree[e] == 0)
        order: list[EdgeId] = []
        while layer:
            order.extend(layer)
            ready: list[EdgeId] = []
            for e in layer:
                for succ in self._succ.get(e, ()):
                    indegree[succ] -= 1
                    if indegree[succ] == 0:
                        ready.append(succ)
            layer = sorted(ready)
        if len(order) != len(edges):
            stuck = min(e for e, d in indegree.items() if d > 0)
            raise ScheduleError(f"ordering relation has a cycle through edge {stuck}")
        return order

    def sorted_edges(self) -> list[EdgeId]:
        return list(self._sorted)

    @property
    def has_order(self) -> bool:
        return bool(self.pairs)

    def precedes(self, before: EdgeId, after: EdgeId) -> bool:
        """Whether ``before < after`` in the transitive closure."""
        if before == after:
            return False
        if self._rank is not None:
            return self._rank[before] < self._rank[after]
        return before in self._ancestors(after)

    def _ancestors(self, edge: EdgeId) -> frozenset[EdgeId]:
        cached = self._ancestor_cache.get(edge)
        if cached is not None:
            return cached
        stack = [edge]
        pending: set[EdgeId] = {edge}
        while stack:
            top = stack[-1]
            missing = [
                p
                for p in self._pred.get(top, ())
                if p not in self._ancestor_cache and p not in pending
            ]
            if missing:
                stack.extend(missing)
                pending.update(missing)
                continue
            stack.pop()
            pending.discard(top)
            acc: set[EdgeId] = set()
            for p in self._pred.get(top, ()):
                acc.add(p)
                acc |= self._ancestor_cache.get(p, frozenset())
            self._ancestor_cache[top] = frozenset(acc)
        return self._ancestor_cache[edge]


def delta(poset: UpdatePoset, e1: EdgeId, e2: EdgeId) -> int:
    """1 iff updating e1 reads e2's current-iteration value under the order.

    That is: e2 precedes e1 and e2's message feeds e1's update.
    """
    poset.graph.check_edge(e1)
    poset.graph.check_edge(e2)
    if e2 in edge_neighbors(poset.graph, e1) and poset.precedes(e2, e1):
        return 1
    return 0


def parall_poset(graph: FactorGraph) -> UpdatePoset:
    """Empty relation: every message reads only previous-iteration values."""
    return UpdatePoset(graph, ())


def seqfix_poset(
    graph: FactorGraph, order: Optional[Sequence[EdgeId]] = None
) -> UpdatePoset:
    """Total order following a fixed update sequence (canonical if omitted)."""
    edges = graph.edge_list()
    if order is None:
        order = edges
    else:
        order = [graph.check_edge(e) for e in order]
        if len(order) != len(edges) or set(order) != set(edges):
            raise ScheduleError("SEQFIX order must be a permutation of all edges")
    pairs = list(zip(order, order[1:]))
    rank = {e: i for i, e in enumerate(order)}
    return UpdatePoset(graph, pairs, rank=rank)


def topo_poset(graph: FactorGraph) -> UpdatePoset:
    """Two-phase tree order: messages flow leaves-to-root, then root-to-leaves.

    Requires the graph to be a forest. Each component is rooted at its
    lowest-indexed variable. Phase one takes the edges whose message points
    toward the root, deepest factors first; phase two takes the outward
    edges, shallowest variables first. Every feeding message scheduled
    earlier is declared a predecessor, which makes one iteration exact on
    trees.
    """
    n_vars = graph.num_variables
    n_nodes = n_vars + graph.num_factors
    # Bipartite node ids: variables 0..V-1, factors V..V+F-1.
    neighbors: list[list[tuple[int, EdgeId]]] = [[] for _ in range(n_nodes)]
    for edge in graph.edges():
        var = graph.variable_of(edge)
        fnode = n_vars + edge.factor
        neighbors[var].append((fnode, edge))
        neighbors[fnode].append((var, edge))

    depth = [-1] * n_nodes
    for root in range(n_vars):
        if depth[root] != -1:
            continue
        depth[root] = 0
        queue = deque([root])
        parent_edge: dict[int, EdgeId] = {}
        while queue:
            node = queue.popleft()
            for other, edge in neighbors[node]:
                if depth[other] == -1:
                    depth[other] = depth[node] + 1
                    parent_edge[other] = edge
                    queue.append(other)
                elif parent_edge.get(node) != edge:
                    raise ScheduleError(
                        f"graph has a cycle through edge {edge}; "
                        "TOPO requires a tree-structured graph"
                    )

    inward: list[EdgeId] = []
    outward: list[EdgeId] = []
    for edge in graph.edges():
        var = graph.variable_of(edge)
        fnode = n_vars + edge.factor
        if depth[var] < depth[fnode]:
            inward.append(edge)
        else:
            outward.append(edge)
    inward.sort(key=lambda e: (-depth[n_vars + e.factor], e))
    outward.sort(key=lambda e: (depth[graph.variable_of(e)], e))
    linear = inward + outward

    position = {e: i for i, e in enumerate(linear)}
    pairs = [
        (other, edge)
        for edge in linear
        for other in edge_neighbors(graph, edge)
        if position[other] < position[edge]
    ]
    return UpdatePoset(graph, pairs)


def custom_poset(
    graph: FactorGraph, pairs: Iterable[tuple[EdgeId, EdgeId]]
) -> UpdatePoset:
    """User-defined relation from explicit ordering pairs."""
    return UpdatePoset(graph, pairs)


def dependency_analysis(poset: UpdatePoset) -> list[list[EdgeId]]:
    """Partition the edges into ordered parallel batches.

    Scans the topologically sorted edges, packing each into the current
    batch unless a message already in the batch both feeds it and is
    ordered before it; then the batch is flushed and a new one starts.
    """
    order = poset.sorted_edges()
    if not order:
        return []
    if not poset.has_order:
        return [order]
    graph = poset.graph
    batches: list[list[EdgeId]] = []
    current: list[EdgeId] = []
    current_set: set[EdgeId] = set()
    for edge in order:
        conflict = any(
            other in current_set and poset.precedes(other, edge)
            for other in edge_neighbors(graph, edge)
        )
        if conflict:
            batches.append(current)
            current = [edge]
            current_set = {edge}
        else:
            current.append(edge)
            current_set.add(edge)
    batches.append(current)
    return batches


def group_var_to_factor(
    graph: FactorGraph, s_batches: Sequence[Sequence[EdgeId]]
) -> list[list[EdgeId]]:
    """Companion variable-to-factor batches.

    For each factor-to-variable batch, collect the messages its updates
    read: for edge (a, v), the messages from every other neighbor of a
    into a. Returned as edges of the same graph (the edge names both
    directions), deduplicated and sorted.
    """
    t_batches: list[list[EdgeId]] = []
    for batch in s_batches:
        seen: set[EdgeId] = set()
        for edge in batch:
            degree = graph.factors[edge.factor].degree
            for slot in range(degree):
                if slot != edge.slot:
                    seen.add(EdgeId(edge.factor, slot))
        t_batches.append(sorted(seen))
    return t_batches


@dataclass(frozen=True)
class Schedule:
    """Compiled update plan: aligned factor-to-variable / variable-to-factor batches."""

    s_batches: tuple[tuple[EdgeId, ...], ...]
    t_batches: tuple[tuple[EdgeId, ...], ...]

    @property
    def num_batches(self) -> int:
        return len(self.s_batches)

    def batch_index(self) -> dict[EdgeId, int]:
        """Map each edge to the batch updating its factor-to-variable message."""
        index: dict[EdgeId, int] = {}
        for i, batch in enumerate(self.s_batches):
            for edge in batch:
                index[edge] = i
        return index


def compile_schedule(graph: FactorGraph, poset: UpdatePoset) -> Schedule:
    s_batches = dependency_analysis(poset)
    t_batches = group_var_to_factor(graph, s_batches)
    return Schedule(
        tuple(tuple(b) for b in s_batches),
        tuple(tuple(b) for b in t_batches),
    )


def verify_batches(
    poset: UpdatePoset, s_batches: Sequence[Sequence[EdgeId]]
) -> list[tuple[EdgeId, EdgeId]]:
    """Check that every ordered feeding message lands in an earlier batch.

    Returns (edge, dependency) pairs that violate the property; an empty
    list means the schedule is sound for the given order.
    """
    graph = poset.graph
    batch_of: dict[EdgeId, int] = {}
    for i, batch in enumerate(s_batches):
        for edge in batch:
            batch_of[edge] = i
    violations: list[tuple[EdgeId, EdgeId]] = []
    for edge, i in batch_of.items():
        for other in edge_neighbors(graph, edge):
            if poset.precedes(other, edge) and batch_of.get(other, -1) >= i:
                violations.append((edge, other))
    return violations


def _parse_edge_token(token: str, lineno: int) -> EdgeId:
    parts = token.split(":")
    if len(parts) != 2:
        raise ScheduleError(f"line {lineno}: expected <factor>:<slot>, got {token!r}")
    try:
        return EdgeId(int(parts[0]), int(parts[1]))
    except ValueError:
        raise ScheduleError(f"line {lineno}: bad edge token {token!r}") from None


@dataclass(frozen=True)
class Strategy:
    """A named update strategy, buildable into a poset for any graph.

    PARALL needs no extra data; SEQFIX optionally carries a fixed edge
    order (canonical order if absent); CUSTOM carries explicit ordering
    pairs; TOPO derives everything from the graph.
    """

    kind: str
    order: Optional[tuple[EdgeId, ...]] = None
    pairs: Optional[tuple[tuple[EdgeId, EdgeId], ...]] = None

    def __post_init__(self):
        if self.kind not in STRATEGY_NAMES:
            raise ScheduleError(f"unknown strategy {self.kind!r}")

    @classmethod
    def parall(cls) -> "Strategy":
        return cls("PARALL")

    @classmethod
    def seqfix(cls, order: Optional[Sequence[EdgeId]] = None) -> "Strategy":
        return cls("SEQFIX", order=tuple(order) if order is not None else None)

    @classmethod
    def topo(cls) -> "Strategy":
        return cls("TOPO")

    @classmethod
    def custom(cls, pairs: Iterable[tuple[EdgeId, EdgeId]]) -> "Strategy":
        return cls("CUSTOM", pairs=tuple(pairs))

    @classmethod
    def from_name(cls, name: str) -> "Strategy":
        name = name.upper()
        if name == "CUSTOM":
            raise ScheduleError("CUSTOM strategy needs a strategy file")
        if name not in STRATEGY_NAMES:
            raise ScheduleError(f"unknown strategy {name!r}")
        return cls(name)

    @classmethod
    def from_text(cls, text: str) -> "Strategy":
        kind: Optional[str] = None
        order: list[EdgeId] = []
        pairs: list[tuple[EdgeId, EdgeId]] = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            if kind is None:
                if len(tokens) != 2 or tokens[0] != "strategy":
                    raise ScheduleError(
                        f"line {lineno}: expected 'strategy <PARALL|SEQFIX|TOPO|CUSTOM>'"
                    )
                if tokens[1] not in STRATEGY_NAMES:
                    raise ScheduleError(f"line {lineno}: unknown strategy {tokens[1]!r}")
                kind = tokens[1]
                continue
            if tokens[0] == "edge":
                if kind != "SEQFIX":
                    raise ScheduleError(f"line {lineno}: 'edge' lines need strategy SEQFIX")
                if len(tokens) != 2:
                    raise ScheduleError(f"line {lineno}: expected 'edge <factor>:<slot>'")
                order.append(_parse_edge_token(tokens[1], lineno))
            elif tokens[0] == "before":
                if kind != "CUSTOM":
                    raise ScheduleError(f"line {lineno}: 'before' lines need strategy CUSTOM")
                if len(tokens) != 3:
                    raise ScheduleError(
                        f"line {lineno}: expected 'before <factor>:<slot> <factor>:<slot>'"
                    )
                pairs.append(
                    (
                        _parse_edge_token(tokens[1], lineno),
                        _parse_edge_token(tokens[2], lineno),
                    )
                )
            else:
                raise ScheduleError(f"line {lineno}: unknown directive {tokens[0]!r}")
        if kind is None:
            raise ScheduleError("strategy file is empty")
        if kind == "SEQFIX":
            return cls.seqfix(order if order else None)
        if kind == "CUSTOM":
            return cls.custom(pairs)
        return cls(kind)

    def build_poset(self, graph: FactorGraph) -> UpdatePoset:
        if self.kind == "PARALL":
            return parall_poset(graph)
        if self.kind == "SEQFIX":
            return seqfix_poset(graph, self.order)
        if self.kind == "TOPO":
            return topo_poset(graph)
        return custom_poset(graph, self.pairs or ())

    def compile(self, graph: FactorGraph) -> Schedule:
        return compile_schedule(graph, self.build_poset(graph))
