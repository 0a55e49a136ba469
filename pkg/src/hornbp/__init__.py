"""Belief propagation on binary AND/OR factor graphs with batched schedules."""

from .engine import (
    EngineOptions,
    InferenceResult,
    OpCounter,
    UnderflowError,
    closed_form_message,
    compute_marginals,
    run,
    split_ftov_batch,
    update_and_body,
    update_and_head,
    update_ftov_batch,
    update_or_body,
    update_or_head,
    update_vtof_batch,
)
from .graph import (
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
from .oracle import (
    OracleError,
    exact_marginals,
    materialize_table,
    naive_factor_message,
    sequential_reference,
)
from .ranking import (
    AlarmSet,
    InteractionTrace,
    RankingMetrics,
    compute_metrics,
    interaction_loop,
    parse_alarms,
    rank_alarms,
)
from .schedule import (
    Schedule,
    ScheduleError,
    Strategy,
    UpdatePoset,
    compile_schedule,
    delta,
    dependency_analysis,
    edge_neighbors,
    group_var_to_factor,
    verify_batches,
)
from .storage import MessageStore, StorageError, edge_indices, initialize
from .synth import SynthSpec, SynthError, generate

__version__ = "0.1.0"
