"""Synthetic clause/tuple graph generator for tests and benchmarks.

Builds a layered derivation DAG: a pool of input tuples, then derived
tuples each produced by one or more AND clauses whose premises are earlier
tuples. Converted through the DAG-to-factor-graph path, so the output
satisfies every graph invariant. Shapes follow the scale regime of real
analysis graphs: variables = tuples + clauses, body sizes small.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import DagNode, FactorGraph, from_bayesian_dag
from .ranking import AlarmSet


class SynthError(ValueError):
    """Infeasible generator parameters."""


@dataclass(frozen=True)
class SynthSpec:
    num_tuples: int
    num_clauses: int
    max_premises: int = 8
    seed: int = 0
    tree_only: bool = False
    clause_prob: float = 0.999

    def validate(self) -> None:
        if self.num_tuples < 1:
            if self.num_clauses > 0:
                raise SynthError("clauses with zero tuples are infeasible")
            raise SynthError("need at least one tuple")
        if self.num_clauses < 0:
            raise SynthError("clause count must be nonnegative")
        if self.num_clauses > 0 and self.num_tuples < 2:
            raise SynthError("clauses need at least two tuples (premise + conclusion)")
        if self.max_premises < 1:
            raise SynthError("max_premises must be at least 1")
        if self.tree_only and self.num_clauses > self.num_tuples - 1:
            raise SynthError(
                "tree mode needs num_clauses <= num_tuples - 1 "
                "(one clause derives one tuple from one premise)"
            )
        if not 0.0 < self.clause_prob <= 1.0:
            raise SynthError("clause_prob must be in (0, 1]")


def _sample_distinct(rng: np.random.Generator, upper: int, count: int) -> list[int]:
    """Deterministic distinct sample from range(upper) without O(upper) cost."""
    if count >= upper:
        return list(range(upper))
    picked: list[int] = []
    seen: set[int] = set()
    while len(picked) < count:
        for value in rng.integers(0, upper, size=count - len(picked)).tolist():
            if value not in seen:
                seen.add(value)
                picked.append(value)
                if len(picked) == count:
                    break
    return picked


def generate(spec: SynthSpec) -> tuple[FactorGraph, AlarmSet]:
    """Deterministic (graph, alarms) pair for the spec's seed.

    Tuple variables take ids 0..num_tuples-1 (inputs first), clause
    variables follow. Alarms are a random subset of sink tuples (tuples no
    clause consumes) with random ground-truth labels; at least one alarm
    is always produced.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n_tuples = spec.num_tuples
    n_clauses = spec.num_clauses

    if spec.tree_only:
        derived = n_clauses
    else:
        derived = min(n_clauses, n_tuples - max(1, n_tuples // 3))
    inputs = n_tuples - derived

    # Conclusions: every derived tuple gets one clause; extras (non-tree)
    # re-derive random derived tuples, giving multi-parent OR bodies.
    conclusion = list(range(derived))
    for _ in range(n_clauses - derived):
        conclusion.append(int(rng.integers(0, derived)))

    p = spec.clause_prob
    nodes = [DagNode(f"t{i}", "input", p) for i in range(inputs)]
    nodes += [DagNode(f"t{inputs + j}", "tuple") for j in range(derived)]
    nodes += [DagNode(f"c{k}", "clause", p) for k in range(n_clauses)]
    edges: list[tuple[str, str]] = []

    consumed = np.zeros(n_tuples, dtype=bool)
    for k, target in enumerate(sorted(conclusion)):
        # Premises come from tuples created before the conclusion.
        pool = inputs + target
        if spec.tree_only:
            count = 1
        else:
            count = min(int(rng.geometric(0.7)), spec.max_premises, pool)
        for premise in _sample_distinct(rng, pool, count):
            edges.append((f"t{premise}", f"c{k}"))
            consumed[premise] = True
        edges.append((f"c{k}", f"t{inputs + target}"))

    graph = from_bayesian_dag(nodes, edges)

    sinks = [i for i in range(n_tuples) if not consumed[i]]
    if not sinks:
        sinks = [n_tuples - 1]
    count = max(1, len(sinks) // 4)
    chosen = sorted(sinks[i] for i in _sample_distinct(rng, len(sinks), count))
    labels = rng.integers(0, 2, size=len(chosen)).astype(bool)
    return graph, AlarmSet(tuple(chosen), tuple(bool(b) for b in labels))
