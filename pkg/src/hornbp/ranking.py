"""Interactive alarm-ranking loop and its accuracy metrics.

Alarms are variables whose truth the analysis reports; each round runs
inference, presents the unlabeled alarm with the highest P(true), reveals
its ground-truth label, and pins that label into the graph as evidence
before the next round. The loop stops once every true alarm has been
revealed. Metrics summarize how quickly true alarms surfaced in the
revealed label sequence.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .engine import EngineOptions, run
from .graph import FactorGraph, GraphError, clamp_evidence
from .schedule import Strategy


@dataclass(frozen=True)
class AlarmSet:
    alarms: tuple[int, ...]
    labels: tuple[bool, ...]

    def __post_init__(self):
        if len(self.alarms) != len(self.labels):
            raise ValueError("alarms and labels must align")
        if len(set(self.alarms)) != len(self.alarms):
            raise ValueError("duplicate alarm id")

    def __len__(self) -> int:
        return len(self.alarms)

    @property
    def num_true(self) -> int:
        return sum(self.labels)

    def label_of(self, alarm: int) -> bool:
        return self.labels[self.alarms.index(alarm)]


@dataclass(frozen=True)
class InteractionRound:
    alarm: int
    label: bool
    p_true: float
    seconds: float


@dataclass
class InteractionTrace:
    rounds: list[InteractionRound]

    @property
    def label_sequence(self) -> list[int]:
        return [int(r.label) for r in self.rounds]

    def roc_points(self) -> list[tuple[int, int, int]]:
        """(round, cumulative false, cumulative true) per revealed label."""
        points = []
        false_count = true_count = 0
        for i, r in enumerate(self.rounds, start=1):
            if r.label:
                true_count += 1
            else:
                false_count += 1
            points.append((i, false_count, true_count))
        return points


@dataclass(frozen=True)
class RankingMetrics:
    rank_100t: int
    rank_90t: int
    inversions: int
    auc: float


def rank_alarms(
    marginals: np.ndarray,
    alarm_set: AlarmSet,
    already_labeled: Sequence[int] = (),
) -> list[int]:
    """Unlabeled alarms by descending P(true); ties broken by ascending id."""
    labeled = set(already_labeled)
    candidates = [a for a in alarm_set.alarms if a not in labeled]
    return sorted(candidates, key=lambda a: (-float(marginals[a, 1]), a))


def interaction_loop(
    graph: FactorGraph,
    alarm_set: AlarmSet,
    strategy: Strategy,
    options: Optional[EngineOptions] = None,
    workers: int = 1,
) -> InteractionTrace:
    """Replay the label-and-refine loop from ground-truth labels.

    Each round recompiles the strategy for the current graph (clamping
    grows the edge set), runs inference from uniform messages, reveals the
    top-ranked unlabeled alarm, and clamps it. Non-convergence is fine
    (the marginals still rank); an underflow aborts with diagnostics.
    """
    if len(alarm_set) == 0:
        raise ValueError("alarm set is empty")
    if alarm_set.num_true == 0:
        raise ValueError("alarm set has no true alarm")
    for alarm in alarm_set.alarms:
        if not 0 <= alarm < graph.num_variables:
            raise GraphError(f"alarm variable {alarm} out of range")

    current = graph
    labeled: list[int] = []
    rounds: list[InteractionRound] = []
    remaining_true = alarm_set.num_true
    while remaining_true > 0:
        started = time.perf_counter()
        schedule = strategy.compile(current)
        result = run(current, schedule, options, workers=workers)
        ranked = rank_alarms(result.marginals, alarm_set, labeled)
        top = ranked[0]
        label = alarm_set.label_of(top)
        current = clamp_evidence(current, top, label)
        elapsed = time.perf_counter() - started
        rounds.append(
            InteractionRound(top, label, float(result.marginals[top, 1]), elapsed)
        )
        labeled.append(top)
        if label:
            remaining_true -= 1
    return InteractionTrace(rounds)


def compute_metrics(
    trace: Union[InteractionTrace, Sequence[int]]
) -> RankingMetrics:
    """Ranking quality of a revealed label sequence.

    rank_100t / rank_90t: rounds until all / 90% of the true labels are
    revealed. inversions: false labels revealed before a later true label,
    summed pairwise. auc: area fraction under the step curve through
    (cumulative false, cumulative true), which satisfies
    inversions == num_true * num_false * (1 - auc); defined as 1.0 when
    either class is empty.
    """
    if isinstance(trace, InteractionTrace):
        labels = trace.label_sequence
    else:
        labels = [int(bool(x)) for x in trace]
    if not labels:
        raise ValueError("trace is empty")
    total_true = sum(labels)
    total_false = len(labels) - total_true

    rank_100t = 0
    rank_90t = 0
    seen = 0
    for i, label in enumerate(labels, start=1):
        seen += label
        if rank_90t == 0 and 10 * seen >= 9 * total_true:
            rank_90t = i if total_true else 0
        if seen == total_true:
            rank_100t = i if total_true else 0
            break

    inversions = 0
    trues_after = total_true
    for label in labels:
        trues_after -= label
        if not label:
            inversions += trues_after

    if total_true == 0 or total_false == 0:
        auc = 1.0
    else:
        auc = 1.0 - inversions / (total_true * total_false)
    return RankingMetrics(rank_100t, rank_90t, inversions, auc)


def parse_alarms(text: str) -> AlarmSet:
    """Parse `alarm <varIdx> <0|1>` lines ('#' comments allowed)."""
    alarms: list[int] = []
    labels: list[bool] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if len(tokens) != 3 or tokens[0] != "alarm":
            raise ValueError(f"line {lineno}: expected 'alarm <varIdx> <0|1>'")
        try:
            var = int(tokens[1])
        except ValueError:
            raise ValueError(f"line {lineno}: bad variable index {tokens[1]!r}") from None
        if tokens[2] not in ("0", "1"):
            raise ValueError(f"line {lineno}: label must be 0 or 1")
        alarms.append(var)
        labels.append(tokens[2] == "1")
    return AlarmSet(tuple(alarms), tuple(labels))


def alarms_to_text(alarm_set: AlarmSet) -> str:
    lines = [
        f"alarm {alarm} {int(label)}"
        for alarm, label in zip(alarm_set.alarms, alarm_set.labels)
    ]
    return "\n".join(lines) + "\n"
