"""Independent brute-force references used to check the engine.

Three references, all deliberately free of the engine's closed forms:

* dense factor tables materialized straight from the AND/OR definition,
  with messages computed by summing over every assignment;
* exact marginals by exhaustive enumeration of all variable assignments;
* a one-message-at-a-time reference executor that replays an update
  strategy sequentially, reading current- or previous-iteration values
  edge by edge.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .engine import (
    MIN_MESSAGE_SUM,
    EngineOptions,
    InferenceResult,
    OpCounter,
    UnderflowError,
)
from .graph import EdgeId, Factor, FactorGraph, FactorKind
from .schedule import UpdatePoset, compile_schedule

MAX_TABLE_DEGREE = 20  # head + body slots; 2^20 table entries
MAX_ENUM_VARIABLES = 24
_ENUM_CHUNK = 1 << 16


class OracleError(ValueError):
    """Problem too large for brute force, or degenerate weights."""


def materialize_table(factor: Factor) -> np.ndarray:
    """Dense factor table, shape (2,) * (n + 1); axis 0 is the head.

    AND rows: value p1 / 1-p1 (head 1/0) when every body bit is 1, else
    p2 / 1-p2. OR rows: p1 / 1-p1 when any body bit is 1, else p2 / 1-p2.
    A body-empty AND behaves as the prior (p, 1-p) on the head.
    """
    degree = factor.degree
    if degree > MAX_TABLE_DEGREE:
        raise OracleError(f"factor degree {degree} exceeds table limit {MAX_TABLE_DEGREE}")
    shape = (2,) * degree
    bits = np.indices(shape)
    head = bits[0].astype(bool)
    if factor.arity:
        body = bits[1:]
        condition = body.all(axis=0) if factor.kind is FactorKind.AND else body.any(axis=0)
    else:
        condition = np.full(shape, factor.kind is FactorKind.AND)
    p_head = np.where(condition, factor.p1, factor.p2)
    return np.where(head, p_head, 1.0 - p_head)


def naive_factor_message(
    table: np.ndarray,
    incoming: Sequence[Optional[tuple[float, float]]],
    target_slot: int,
    counter: Optional[OpCounter] = None,
) -> tuple[float, float]:
    """Sum the full table against the incoming messages; no shortcuts.

    mu(x) = sum over all assignments with the target slot fixed at x of
    the table value times the product of the other slots' message
    components. ``incoming`` is indexed by slot; the target entry is
    ignored.
    """
    degree = table.ndim
    if not 0 <= target_slot < degree:
        raise OracleError("target slot out of range")
    size = table.size
    flat = np.arange(size)
    values = table.reshape(-1).astype(np.float64)
    weights = np.ones(size)
    target_bits = None
    for slot in range(degree):
        bit = (flat >> (degree - 1 - slot)) & 1
        if slot == target_slot:
            target_bits = bit
            continue
        m = np.asarray(incoming[slot], dtype=np.float64)
        weights = weights * m[bit]
        if counter is not None:
            counter.add(size)
    weighted = weights * values
    if counter is not None:
        counter.add(size)
    m0 = float(weighted[target_bits == 0].sum())
    m1 = float(weighted[target_bits == 1].sum())
    return m0, m1


def exact_marginals(graph: FactorGraph) -> np.ndarray:
    """Exact per-variable (P0, P1) by enumerating every assignment.

    Weighs each of the 2^N assignments by the product of materialized
    factor table values; guards at 24 variables.
    """
    n = graph.num_variables
    if n > MAX_ENUM_VARIABLES:
        raise OracleError(f"{n} variables exceed enumeration limit {MAX_ENUM_VARIABLES}")
    tables = [
        (factor.variables(), materialize_table(factor).reshape(-1))
        for factor in graph.factors
    ]
    sums1 = np.zeros(n)
    total = 0.0
    for lo in range(0, 1 << n, _ENUM_CHUNK):
        hi = min(lo + _ENUM_CHUNK, 1 << n)
        assign = np.arange(lo, hi, dtype=np.int64)
        weights = np.ones(hi - lo)
        for variables, flat in tables:
            degree = len(variables)
            idx = np.zeros(hi - lo, dtype=np.int64)
            for slot, var in enumerate(variables):
                idx |= ((assign >> var) & 1) << (degree - 1 - slot)
            weights = weights * flat[idx]
        total += float(weights.sum())
        for var in range(n):
            mask = (assign >> var) & 1
            sums1[var] += float(weights[mask == 1].sum())
    if total <= 0.0:
        raise OracleError("total weight is zero (contradictory evidence?)")
    out = np.empty((n, 2))
    out[:, 1] = sums1 / total
    out[:, 0] = 1.0 - out[:, 1]
    return out


def _normalize_message(m: tuple[float, float], what: str) -> tuple[float, float]:
    total = m[0] + m[1]
    if total < MIN_MESSAGE_SUM:
        raise UnderflowError(f"{what} degenerated to zero mass")
    return m[0] / total, m[1] / total


def sequential_reference(
    graph: FactorGraph,
    poset: UpdatePoset,
    options: Optional[EngineOptions] = None,
) -> InferenceResult:
    """Replay the strategy one message at a time with naive table sums.

    Edges are walked in the compiled batch order. Each factor-to-variable
    update recomputes the variable-to-factor messages it needs on demand,
    reading an input edge's current-iteration value exactly when that edge
    sits in an earlier batch (the same data the batched engine sees at the
    start of the input's batch), and the previous iteration's value
    otherwise.
    """
    options = options or EngineOptions()
    options.validate()
    normalize = options.normalize_messages

    schedule = compile_schedule(graph, poset)
    order: list[EdgeId] = [e for batch in schedule.s_batches for e in batch]
    batch_of = schedule.batch_index()
    tables = [materialize_table(factor) for factor in graph.factors]

    previous: dict[EdgeId, tuple[float, float]] = {
        e: (1.0, 1.0) for e in graph.edges()
    }
    n_vars = graph.num_variables
    prev_p1 = np.full(n_vars, 0.5)
    deltas: list[float] = []
    history: Optional[list[np.ndarray]] = [] if options.record_history else None
    marginals = np.full((n_vars, 2), 0.5)
    converged = False
    iterations = 0
    delta = float("inf")

    for iteration in range(1, options.max_iterations + 1):
        current: dict[EdgeId, tuple[float, float]] = {}
        for edge in order:
            factor = graph.factors[edge.factor]
            incoming: list[Optional[tuple[float, float]]] = [None] * factor.degree
            for slot, var in enumerate(factor.variables()):
                if slot == edge.slot:
                    continue
                m0, m1 = 1.0, 1.0
                for other_factor, other_slot in graph.adjacency[var]:
                    if other_factor == edge.factor:
                        continue
                    source = EdgeId(other_factor, other_slot)
                    use_current = batch_of[source] < batch_of[edge]
                    v0, v1 = current[source] if use_current else previous[source]
                    m0 *= v0
                    m1 *= v1
                message = (m0, m1)
                if normalize:
                    message = _normalize_message(message, "variable-to-factor message")
                incoming[slot] = message
            updated = naive_factor_message(tables[edge.factor], incoming, edge.slot)
            if normalize:
                updated = _normalize_message(updated, "factor-to-variable message")
            current[edge] = updated
        previous = current

        marginals = np.empty((n_vars, 2))
        for var in range(n_vars):
            prod0, prod1 = 1.0, 1.0
            for other_factor, other_slot in graph.adjacency[var]:
                v0, v1 = previous[EdgeId(other_factor, other_slot)]
                prod0 *= v0
                prod1 *= v1
            total = prod0 + prod1
            if total < MIN_MESSAGE_SUM:
                raise UnderflowError(
                    f"marginal of variable {var} degenerated to zero mass"
                )
            marginals[var, 0] = prod0 / total
            marginals[var, 1] = 1.0 - marginals[var, 0]

        delta = float(np.max(np.abs(marginals[:, 1] - prev_p1))) if n_vars else 0.0
        deltas.append(delta)
        if history is not None:
            history.append(marginals.copy())
        prev_p1 = marginals[:, 1]
        iterations = iteration
        if delta < options.tolerance:
            converged = True
            break

    return InferenceResult(
        marginals=marginals,
        converged=converged,
        iterations=iterations,
        last_delta=delta,
        deltas=deltas,
        history=history,
    )
