"""Iterative message passing over a compiled schedule.

Factor-to-variable messages use closed forms that exploit the AND/OR
structure, so one message costs O(arity) multiplies instead of summing the
full assignment table. Writing h for the head's incoming message and m_i
for the body messages (component 0/1 per truth value), with products over
the non-target body slots:

AND, body target j:
    common = ((1-p2) h0 + p2 h1) * prod(m_i0 + m_i1)
    mu(0)  = common
    mu(1)  = common + (p2-p1)(h0 - h1) * prod(m_i1)
AND, head target:
    mu(1) = p2 * prod(m_i0 + m_i1) + (p1-p2) * prod(m_i1)
    mu(0) = (1-p2) * prod(m_i0 + m_i1) - (p1-p2) * prod(m_i1)
OR, body target j:
    common = ((1-p1) h0 + p1 h1) * prod(m_i0 + m_i1)
    mu(1)  = common
    mu(0)  = common + (p1-p2)(h0 - h1) * prod(m_i0)
OR, head target:
    mu(1) = p1 * prod(m_i0 + m_i1) + (p2-p1) * prod(m_i0)
    mu(0) = (1-p1) * prod(m_i0 + m_i1) - (p2-p1) * prod(m_i0)

Every update in a pass reads from the opposite direction's buffer and
writes its own slot, so passes are data-parallel over slots; batches of a
schedule run in order with a barrier between passes. All passes gather
inputs first and scatter results after computing, so a pass never observes
its own writes and results are independent of the worker count.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .graph import EdgeId, FactorGraph, FactorKind
from .schedule import Schedule
from .storage import KIND_OR, MessageStore, initialize

MIN_MESSAGE_SUM = 1e-300

# Below this many targets a pass is not worth fanning out to threads.
_PARALLEL_MIN_TARGETS = 4096


class UnderflowError(RuntimeError):
    """A message or marginal degenerated to total mass zero.

    Usually caused by contradictory evidence on connected variables.
    """


class OpCounter:
    """Counts elementwise multiplications executed by instrumented kernels."""

    __slots__ = ("count",)

    def __init__(self):
        self.count = 0

    def add(self, n: int) -> None:
        self.count += int(n)


@dataclass
class EngineOptions:
    max_iterations: int = 1000
    tolerance: float = 1e-9
    normalize_messages: bool = True
    time_limit: Optional[float] = None
    record_history: bool = False

    def validate(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.tolerance < 0:
            raise ValueError("tolerance must be nonnegative")
        if self.time_limit is not None and self.time_limit <= 0:
            raise ValueError("time_limit must be positive")


@dataclass
class InferenceResult:
    marginals: np.ndarray  # shape (num_variables, 2): P(X=0), P(X=1)
    converged: bool
    iterations: int
    last_delta: float
    deltas: list[float] = field(default_factory=list)
    history: Optional[list[np.ndarray]] = None


@dataclass
class _Pass:
    """One data-parallel pass, targets sorted by descending row length.

    ``lanes[k]`` is how many targets still have a slot at row offset k, so
    the level loop shrinks its active prefix instead of masking dead lanes.
    """

    targets: np.ndarray
    start: np.ndarray
    excl: np.ndarray
    lanes: np.ndarray
    v0: Optional[np.ndarray] = None
    p1: Optional[np.ndarray] = None
    p2: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.targets)

    def slice(self, lo: int, hi: int) -> "_Pass":
        lanes = np.clip(self.lanes - lo, 0, hi - lo)
        return _Pass(
            self.targets[lo:hi],
            self.start[lo:hi],
            self.excl[lo:hi],
            lanes,
            None if self.v0 is None else self.v0[lo:hi],
            None if self.p1 is None else self.p1[lo:hi],
            None if self.p2 is None else self.p2[lo:hi],
        )


def _compile_pass(
    targets: np.ndarray,
    start: np.ndarray,
    end: np.ndarray,
    excl: np.ndarray,
    v0: Optional[np.ndarray] = None,
    p1: Optional[np.ndarray] = None,
    p2: Optional[np.ndarray] = None,
) -> _Pass:
    rowlen = end - start
    order = np.argsort(-rowlen, kind="stable")
    rowlen = rowlen[order]
    max_len = int(rowlen[0]) if len(rowlen) else 0
    # lanes[k] = number of rows longer than k; rows are sorted descending.
    ascending = -rowlen
    lanes = np.searchsorted(ascending, -np.arange(max_len), side="left")
    return _Pass(
        targets[order],
        start[order],
        excl[order],
        lanes,
        None if v0 is None else v0[order],
        None if p1 is None else p1[order],
        None if p2 is None else p2[order],
    )


def _normalize_pair(
    m0: np.ndarray, m1: np.ndarray, what: str, rows: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    total = m0 + m1
    if len(total) and float(total.min()) < MIN_MESSAGE_SUM:
        bad = int(np.argmin(total))
        raise UnderflowError(
            f"{what} degenerated to zero mass at {rows[bad]} "
            "(contradictory evidence?)"
        )
    return m0 / total, m1 / total


def _product_scan(pass_: _Pass, buf0, buf1, counter) -> tuple[np.ndarray, np.ndarray]:
    """Componentwise product over each target's row, skipping its own slot."""
    size = len(pass_)
    acc0 = np.ones(size)
    acc1 = np.ones(size)
    for k in range(len(pass_.lanes)):
        n = int(pass_.lanes[k])
        if n == 0:
            break
        pos = pass_.start[:n] + k
        keep = pos != pass_.excl[:n]
        acc0[:n] *= np.where(keep, buf0[pos], 1.0)
        acc1[:n] *= np.where(keep, buf1[pos], 1.0)
        if counter is not None:
            counter.add(2 * n)
    return acc0, acc1


def _run_vtof_pass(
    store: MessageStore, pass_: _Pass, normalize: bool, counter=None
) -> None:
    if not len(pass_):
        return
    m0, m1 = _product_scan(pass_, store.ftov0, store.ftov1, counter)
    if normalize:
        m0, m1 = _normalize_pair(m0, m1, "variable-to-factor message", pass_.targets)
    store.vtof0[pass_.targets] = m0
    store.vtof1[pass_.targets] = m1


def _body_target_products(
    pass_: _Pass, buf0, buf1, head_coeff: np.ndarray, tail_one: bool, counter
) -> tuple[np.ndarray, np.ndarray]:
    """Accumulators for body-target kernels.

    prod1 multiplies the head blend at the head slot and (m0 + m1)
    elsewhere; prod2 multiplies (h0 - h1) at the head slot and m1
    (``tail_one``) or m0 elsewhere. The caller folds in the (p.-p.) sign.
    """
    size = len(pass_)
    prod1 = np.ones(size)
    prod2 = np.ones(size)
    for k in range(len(pass_.lanes)):
        n = int(pass_.lanes[k])
        if n == 0:
            break
        pos = pass_.start[:n] + k
        is_head = pos == pass_.v0[:n]
        keep = pos != pass_.excl[:n]
        m0 = buf0[pos]
        m1 = buf1[pos]
        blend = (1.0 - head_coeff[:n]) * m0 + head_coeff[:n] * m1
        f1 = np.where(is_head, blend, m0 + m1)
        f2 = np.where(is_head, m0 - m1, m1 if tail_one else m0)
        prod1[:n] *= np.where(keep, f1, 1.0)
        prod2[:n] *= np.where(keep, f2, 1.0)
        if counter is not None:
            counter.add(4 * n)
    return prod1, prod2


def _head_target_products(
    pass_: _Pass, buf0, buf1, tail_one: bool, counter
) -> tuple[np.ndarray, np.ndarray]:
    """prod(m0 + m1) and prod(m1) (or prod(m0)) over each target's body row."""
    size = len(pass_)
    prod1 = np.ones(size)
    prod2 = np.ones(size)
    for k in range(len(pass_.lanes)):
        n = int(pass_.lanes[k])
        if n == 0:
            break
        pos = pass_.start[:n] + k
        keep = pos != pass_.excl[:n]
        m0 = buf0[pos]
        m1 = buf1[pos]
        prod1[:n] *= np.where(keep, m0 + m1, 1.0)
        prod2[:n] *= np.where(keep, m1 if tail_one else m0, 1.0)
        if counter is not None:
            counter.add(2 * n)
    return prod1, prod2


def _run_and_body_pass(store, pass_: _Pass, normalize, counter=None) -> None:
    if not len(pass_):
        return
    prod1, prod2 = _body_target_products(
        pass_, store.vtof0, store.vtof1, pass_.p2, tail_one=True, counter=counter
    )
    diff = (pass_.p2 - pass_.p1) * prod2
    if counter is not None:
        counter.add(len(pass_))
    m1 = prod1 + diff
    m0 = prod1
    if normalize:
        m0, m1 = _normalize_pair(m0, m1, "factor-to-variable message", pass_.targets)
    store.ftov0[pass_.targets] = m0
    store.ftov1[pass_.targets] = m1


def _run_and_head_pass(store, pass_: _Pass, normalize, counter=None) -> None:
    if not len(pass_):
        return
    prod1, prod2 = _head_target_products(
        pass_, store.vtof0, store.vtof1, tail_one=True, counter=counter
    )
    diff = (pass_.p1 - pass_.p2) * prod2
    m1 = pass_.p2 * prod1 + diff
    m0 = (1.0 - pass_.p2) * prod1 - diff
    if counter is not None:
        counter.add(3 * len(pass_))
    if normalize:
        m0, m1 = _normalize_pair(m0, m1, "factor-to-variable message", pass_.targets)
    store.ftov0[pass_.targets] = m0
    store.ftov1[pass_.targets] = m1


def _run_or_body_pass(store, pass_: _Pass, normalize, counter=None) -> None:
    if not len(pass_):
        return
    prod1, prod2 = _body_target_products(
        pass_, store.vtof0, store.vtof1, pass_.p1, tail_one=False, counter=counter
    )
    diff = (pass_.p1 - pass_.p2) * prod2
    if counter is not None:
        counter.add(len(pass_))
    m1 = prod1
    m0 = prod1 + diff
    if normalize:
        m0, m1 = _normalize_pair(m0, m1, "factor-to-variable message", pass_.targets)
    store.ftov0[pass_.targets] = m0
    store.ftov1[pass_.targets] = m1


def _run_or_head_pass(store, pass_: _Pass, normalize, counter=None) -> None:
    if not len(pass_):
        return
    prod1, prod2 = _head_target_products(
        pass_, store.vtof0, store.vtof1, tail_one=False, counter=counter
    )
    diff = (pass_.p2 - pass_.p1) * prod2
    m1 = pass_.p1 * prod1 + diff
    m0 = (1.0 - pass_.p1) * prod1 - diff
    if counter is not None:
        counter.add(3 * len(pass_))
    if normalize:
        m0, m1 = _normalize_pair(m0, m1, "factor-to-variable message", pass_.targets)
    store.ftov0[pass_.targets] = m0
    store.ftov1[pass_.targets] = m1


_FTOV_RUNNERS = (
    _run_and_body_pass,
    _run_and_head_pass,
    _run_or_body_pass,
    _run_or_head_pass,
)


def _run_chunked(runner, store, pass_: _Pass, normalize, workers: int, counter) -> None:
    """Fan a pass out over a thread pool; falls back to serial when small.

    Chunks slice the row-length-sorted arrays, so per-slot results (and
    hence the scattered buffers) are identical for any worker count.
    """
    size = len(pass_)
    if workers <= 1 or size < _PARALLEL_MIN_TARGETS or counter is not None:
        runner(store, pass_, normalize, counter)
        return
    bounds = np.linspace(0, size, workers + 1, dtype=np.int64)
    chunks = [
        pass_.slice(int(lo), int(hi))
        for lo, hi in zip(bounds[:-1], bounds[1:])
        if hi > lo
    ]
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        list(pool.map(lambda c: runner(store, c, normalize, None), chunks))


def _resolve_workers(workers: int) -> int:
    if workers < 0:
        raise ValueError("workers must be nonnegative")
    if workers == 0:
        import os

        return os.cpu_count() or 1
    return workers


def split_ftov_batch(
    graph: FactorGraph, batch: Sequence[EdgeId]
) -> tuple[list[EdgeId], list[EdgeId], list[EdgeId], list[EdgeId]]:
    """Route a factor-to-variable batch into the four kernel groups.

    Returns (AND body-target, AND head-target, OR body-target, OR
    head-target); their union is the input batch and they are disjoint, so
    each group runs branch-free.
    """
    and_body: list[EdgeId] = []
    and_head: list[EdgeId] = []
    or_body: list[EdgeId] = []
    or_head: list[EdgeId] = []
    for edge in batch:
        graph.check_edge(edge)
        is_or = graph.factors[edge.factor].kind is FactorKind.OR
        if edge.slot == 0:
            (or_head if is_or else and_head).append(edge)
        else:
            (or_body if is_or else and_body).append(edge)
    return and_body, and_head, or_body, or_head


def _compile_vtof_pass(store: MessageStore, edges: Sequence[EdgeId]) -> _Pass:
    idx = store.vtof_indices(list(edges))
    return _compile_pass(idx, store.av_start[idx], store.av_end[idx], store.av_excl[idx])


def _compile_ftov_passes(store: MessageStore, edges: Sequence[EdgeId]) -> list[_Pass]:
    """Four passes (AND-body, AND-head, OR-body, OR-head) for one batch."""
    idx = store.ftov_indices(list(edges))
    is_or = store.af_kind[idx] == KIND_OR
    is_head = store.af_head[idx]
    masks = (
        ~is_or & ~is_head,
        ~is_or & is_head,
        is_or & ~is_head,
        is_or & is_head,
    )
    passes = []
    for mask in masks:
        sub = idx[mask]
        passes.append(
            _compile_pass(
                sub,
                store.af_start[sub],
                store.af_end[sub],
                store.af_excl[sub],
                store.af_v0[sub],
                store.af_p1[sub],
                store.af_p2[sub],
            )
        )
    return passes


def update_vtof_batch(
    store: MessageStore,
    edges: Sequence[EdgeId],
    normalize: bool = True,
    workers: int = 1,
    counter: Optional[OpCounter] = None,
) -> None:
    """Recompute the variable-to-factor messages named by ``edges``.

    Each message is the componentwise product of the variable's other
    incoming factor-to-variable messages (empty product = (1, 1)).
    """
    if not edges:
        return
    pass_ = _compile_vtof_pass(store, edges)
    _run_chunked(_run_vtof_pass, store, pass_, normalize, workers, counter)


def update_ftov_batch(
    store: MessageStore,
    edges: Sequence[EdgeId],
    normalize: bool = True,
    workers: int = 1,
    counter: Optional[OpCounter] = None,
) -> None:
    """Recompute the factor-to-variable messages named by ``edges``.

    The batch is split four ways by (factor kind, head/body target) and the
    groups run as separate uniform passes.
    """
    if not edges:
        return
    for runner, pass_ in zip(_FTOV_RUNNERS, _compile_ftov_passes(store, edges)):
        _run_chunked(runner, store, pass_, normalize, workers, counter)


def _uniform_ftov_update(store, edges, kind, head, runner, normalize, workers, counter):
    if not edges:
        return
    graph = store.graph
    for edge in edges:
        graph.check_edge(edge)
        factor = graph.factors[edge.factor]
        if factor.kind is not kind or (edge.slot == 0) != head:
            where = "head" if head else "body"
            raise ValueError(f"edge {edge} is not a {kind.value} {where} target")
    idx = store.ftov_indices(list(edges))
    pass_ = _compile_pass(
        idx,
        store.af_start[idx],
        store.af_end[idx],
        store.af_excl[idx],
        store.af_v0[idx],
        store.af_p1[idx],
        store.af_p2[idx],
    )
    _run_chunked(runner, store, pass_, normalize, workers, counter)


def update_and_body(store, edges, normalize=True, workers=1, counter=None) -> None:
    """Messages from AND factors toward body variables."""
    _uniform_ftov_update(
        store, edges, FactorKind.AND, False, _run_and_body_pass, normalize, workers, counter
    )


def update_and_head(store, edges, normalize=True, workers=1, counter=None) -> None:
    """Messages from AND factors toward their head variable."""
    _uniform_ftov_update(
        store, edges, FactorKind.AND, True, _run_and_head_pass, normalize, workers, counter
    )


def update_or_body(store, edges, normalize=True, workers=1, counter=None) -> None:
    """Messages from OR factors toward body variables."""
    _uniform_ftov_update(
        store, edges, FactorKind.OR, False, _run_or_body_pass, normalize, workers, counter
    )


def update_or_head(store, edges, normalize=True, workers=1, counter=None) -> None:
    """Messages from OR factors toward their head variable."""
    _uniform_ftov_update(
        store, edges, FactorKind.OR, True, _run_or_head_pass, normalize, workers, counter
    )


def _compile_marginal_pass(store: MessageStore) -> _Pass:
    n_vars = store.graph.num_variables
    targets = np.arange(n_vars, dtype=np.int64)
    start = store.rowptr_ftov[:-1]
    end = store.rowptr_ftov[1:]
    # No slot is excluded when collecting a variable's full row.
    excl = np.full(n_vars, -1, dtype=np.int64)
    return _compile_pass(targets, start, end, excl)


def _marginals_from_pass(store: MessageStore, pass_: _Pass) -> np.ndarray:
    prod0, prod1 = _product_scan(pass_, store.ftov0, store.ftov1, None)
    total = prod0 + prod1
    if len(total) and float(total.min()) < MIN_MESSAGE_SUM:
        var = int(pass_.targets[int(np.argmin(total))])
        raise UnderflowError(
            f"marginal of variable {var} degenerated to zero mass "
            "(contradictory evidence?)"
        )
    out = np.empty((store.graph.num_variables, 2))
    p0 = prod0 / total
    out[pass_.targets, 0] = p0
    out[pass_.targets, 1] = 1.0 - p0
    return out


def compute_marginals(store: MessageStore) -> np.ndarray:
    """Per-variable (P(X=0), P(X=1)) from the current factor-to-variable messages."""
    return _marginals_from_pass(store, _compile_marginal_pass(store))


def run(
    graph: FactorGraph,
    schedule: Schedule,
    options: Optional[EngineOptions] = None,
    workers: int = 1,
) -> InferenceResult:
    """Iterate the schedule until marginals stop moving or budgets run out.

    Per iteration, every batch first refreshes its variable-to-factor
    messages, then its factor-to-variable messages. Convergence is the max
    absolute change of P(X=1) across variables dropping below the
    tolerance; hitting max_iterations or the time limit returns the
    current marginals with ``converged`` False.
    """
    options = options or EngineOptions()
    options.validate()
    workers = _resolve_workers(workers)
    normalize = options.normalize_messages

    store = initialize(graph)
    compiled = [
        (_compile_vtof_pass(store, t_batch), _compile_ftov_passes(store, s_batch))
        for s_batch, t_batch in zip(schedule.s_batches, schedule.t_batches)
    ]
    marginal_pass = _compile_marginal_pass(store)

    prev_p1 = np.full(graph.num_variables, 0.5)
    deltas: list[float] = []
    history: Optional[list[np.ndarray]] = [] if options.record_history else None
    marginals = np.full((graph.num_variables, 2), 0.5)
    converged = False
    iterations = 0
    delta = float("inf")
    start_time = time.monotonic()

    for iteration in range(1, options.max_iterations + 1):
        for vtof_pass, ftov_passes in compiled:
            _run_chunked(_run_vtof_pass, store, vtof_pass, normalize, workers, None)
            for runner, pass_ in zip(_FTOV_RUNNERS, ftov_passes):
                _run_chunked(runner, store, pass_, normalize, workers, None)
        marginals = _marginals_from_pass(store, marginal_pass)
        delta = float(np.max(np.abs(marginals[:, 1] - prev_p1))) if len(prev_p1) else 0.0
        deltas.append(delta)
        if history is not None:
            history.append(marginals.copy())
        prev_p1 = marginals[:, 1]
        iterations = iteration
        if delta < options.tolerance:
            converged = True
            break
        if (
            options.time_limit is not None
            and time.monotonic() - start_time > options.time_limit
        ):
            break

    return InferenceResult(
        marginals=marginals,
        converged=converged,
        iterations=iterations,
        last_delta=delta,
        deltas=deltas,
        history=history,
    )


def closed_form_message(
    kind: FactorKind,
    p1: float,
    p2: float,
    incoming: Sequence[Optional[tuple[float, float]]],
    target_slot: int,
    counter: Optional[OpCounter] = None,
) -> tuple[float, float]:
    """One factor-to-variable message through the production kernels.

    ``incoming`` lists the factor's variable-to-factor messages in slot
    order (head first); the target slot's entry is ignored. Returns the
    unnormalized message, so it can be compared against table-based
    references directly.
    """
    from .graph import Factor, FactorGraph

    degree = len(incoming)
    if not 0 <= target_slot < degree:
        raise ValueError("target slot out of range")
    factor = Factor(kind, 0, tuple(range(1, degree)), p1, p2)
    store = initialize(FactorGraph(degree, [factor]))
    for slot in range(degree):
        if slot == target_slot:
            continue
        m0, m1 = incoming[slot]
        store.vtof0[slot] = m0
        store.vtof1[slot] = m1
    edge = EdgeId(0, target_slot)
    update_ftov_batch(store, [edge], normalize=False, counter=counter)
    idx = store.ftov_index(edge)
    return float(store.ftov0[idx]), float(store.ftov1[idx])
