"""Flat CSR message buffers and the per-slot index records the kernels read.

Both message directions live in flat length-|E| buffers. The
variable-to-factor buffer is laid out factor-major (row = factor, one slot
per connected variable, head first); the factor-to-variable buffer is the
transpose layout, variable-major (row = variable, slots ordered by factor
then slot). Each slot's aux record points at the row it must scan in the
opposite buffer, the position it must skip (its own edge), plus, for
factor-to-variable slots, the head position and the factor parameters.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .graph import EdgeId, FactorGraph, FactorKind, GraphError

KIND_AND = 0
KIND_OR = 1


class StorageError(ValueError):
    """Store cannot be built for this graph."""


class MessageStore:
    """Message buffers plus immutable layout/index arrays for one graph.

    Built via :func:`initialize`. Message values are the only mutable
    state; layout arrays are fixed per graph, so separate runs can reuse
    compiled schedules.
    """

    def __init__(self, graph: FactorGraph):
        if graph.num_edges == 0:
            raise StorageError("graph has no edges")
        self.graph = graph
        n_edges = graph.num_edges
        n_factors = graph.num_factors
        n_vars = graph.num_variables

        factor_degree = np.array([f.degree for f in graph.factors], dtype=np.int64)
        self.rowptr_vtof = np.zeros(n_factors + 1, dtype=np.int64)
        np.cumsum(factor_degree, out=self.rowptr_vtof[1:])

        self.vtof_var = np.fromiter(
            (v for f in graph.factors for v in f.variables()),
            dtype=np.int64,
            count=n_edges,
        )
        self.vtof_factor = np.repeat(np.arange(n_factors, dtype=np.int64), factor_degree)

        var_degree = np.bincount(self.vtof_var, minlength=n_vars).astype(np.int64)
        self.rowptr_ftov = np.zeros(n_vars + 1, dtype=np.int64)
        np.cumsum(var_degree, out=self.rowptr_ftov[1:])

        # Stable sort by variable keeps the within-row (factor, slot) order,
        # making the factor-to-variable layout the exact transpose.
        self.ftov_to_vtof = np.argsort(self.vtof_var, kind="stable")
        self.vtof_to_ftov = np.empty(n_edges, dtype=np.int64)
        self.vtof_to_ftov[self.ftov_to_vtof] = np.arange(n_edges, dtype=np.int64)
        self.ftov_var = self.vtof_var[self.ftov_to_vtof]
        ftov_factor = self.vtof_factor[self.ftov_to_vtof]

        # Aux for variable-to-factor updates, indexed by vtof position:
        # scan the variable's factor-to-variable row, skipping this edge.
        self.av_start = self.rowptr_ftov[self.vtof_var]
        self.av_end = self.rowptr_ftov[self.vtof_var + 1]
        self.av_excl = self.vtof_to_ftov

        # Aux for factor-to-variable updates, indexed by ftov position:
        # scan the factor's variable-to-factor row, skipping this edge;
        # the head slot sits at the start of the row.
        self.af_start = self.rowptr_vtof[ftov_factor]
        self.af_end = self.rowptr_vtof[ftov_factor + 1]
        self.af_excl = self.ftov_to_vtof
        self.af_v0 = self.af_start.copy()
        p1 = np.array([f.p1 for f in graph.factors], dtype=np.float64)
        p2 = np.array([f.p2 for f in graph.factors], dtype=np.float64)
        kind = np.array(
            [KIND_OR if f.kind is FactorKind.OR else KIND_AND for f in graph.factors],
            dtype=np.int8,
        )
        self.af_p1 = p1[ftov_factor]
        self.af_p2 = p2[ftov_factor]
        self.af_kind = kind[ftov_factor]
        self.af_head = self.af_excl == self.af_v0

        self.vtof0 = np.ones(n_edges, dtype=np.float64)
        self.vtof1 = np.ones(n_edges, dtype=np.float64)
        self.ftov0 = np.ones(n_edges, dtype=np.float64)
        self.ftov1 = np.ones(n_edges, dtype=np.float64)

    @property
    def num_edges(self) -> int:
        return self.graph.num_edges

    def reset(self) -> None:
        """Set all messages back to the uniform value 1.0."""
        for buf in (self.vtof0, self.vtof1, self.ftov0, self.ftov1):
            buf.fill(1.0)

    def vtof_index(self, edge: EdgeId) -> int:
        self.graph.check_edge(edge)
        return int(self.rowptr_vtof[edge.factor]) + edge.slot

    def ftov_index(self, edge: EdgeId) -> int:
        return int(self.vtof_to_ftov[self.vtof_index(edge)])

    def edge_at_vtof(self, index: int) -> EdgeId:
        factor = int(self.vtof_factor[index])
        return EdgeId(factor, index - int(self.rowptr_vtof[factor]))

    def edge_at_ftov(self, index: int) -> EdgeId:
        return self.edge_at_vtof(int(self.ftov_to_vtof[index]))

    def vtof_indices(self, edges) -> np.ndarray:
        """Vectorized vtof positions for a sequence of edges."""
        if not edges:
            return np.empty(0, dtype=np.int64)
        arr = np.asarray(edges, dtype=np.int64)
        factors = arr[:, 0]
        slots = arr[:, 1]
        if factors.min() < 0 or factors.max() >= self.graph.num_factors:
            raise GraphError("edge factor index out of range")
        degrees = self.rowptr_vtof[factors + 1] - self.rowptr_vtof[factors]
        if slots.min() < 0 or np.any(slots >= degrees):
            raise GraphError("edge slot out of range")
        return self.rowptr_vtof[factors] + slots

    def ftov_indices(self, edges) -> np.ndarray:
        return self.vtof_to_ftov[self.vtof_indices(edges)]

    def dump_rows(self) -> Iterator[tuple[str, int, int, float, float]]:
        """Yield (direction, row, slot, m0, m1) for every message slot."""
        for i in range(self.num_edges):
            row = int(self.vtof_factor[i])
            slot = i - int(self.rowptr_vtof[row])
            yield "vtof", row, slot, float(self.vtof0[i]), float(self.vtof1[i])
        for i in range(self.num_edges):
            row = int(self.ftov_var[i])
            slot = i - int(self.rowptr_ftov[row])
            yield "ftov", row, slot, float(self.ftov0[i]), float(self.ftov1[i])


def initialize(graph: FactorGraph) -> MessageStore:
    """Build the store for a graph with every message set to (1.0, 1.0)."""
    return MessageStore(graph)


def edge_indices(store: MessageStore, edge: EdgeId) -> tuple[int, int]:
    """Positions of the edge's two directed messages (vtof, ftov)."""
    vtof = store.vtof_index(edge)
    return vtof, int(store.vtof_to_ftov[vtof])
