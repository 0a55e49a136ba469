"""Command-line front end.

Subcommands: infer, rank, schedule, oracle-check, synth, bench,
dump-store. Outputs are CSV or plain text. Exit codes: 0 success (infer:
converged), 2 input error, 3 non-convergence, 4 oracle/verification
failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from typing import Optional

import numpy as np

from . import engine, oracle, ranking, schedule as sched, storage, synth
from .engine import EngineOptions, OpCounter, UnderflowError
from .graph import Factor, FactorGraph, FactorKind, GraphError, parse_fastfg
from .schedule import ScheduleError, Strategy

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NOT_CONVERGED = 3
EXIT_CHECK_FAILED = 4

MESSAGE_CHECK_TOL = 1e-12
SCHEDULE_CHECK_TOL = 1e-9
TREE_CHECK_TOL = 1e-8


class CliError(Exception):
    """Input problem surfaced to the user; maps to exit code 2."""


def _load_graph(path: str) -> FactorGraph:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return parse_fastfg(handle.read())
    except OSError as exc:
        raise CliError(f"cannot read graph file: {exc}") from exc
    except GraphError as exc:
        raise CliError(f"{path}: {exc}") from exc


def _load_strategy(arg: str) -> Strategy:
    name = arg.upper()
    if name in ("PARALL", "SEQFIX", "TOPO"):
        return Strategy.from_name(name)
    try:
        with open(arg, "r", encoding="utf-8") as handle:
            return Strategy.from_text(handle.read())
    except OSError as exc:
        raise CliError(f"cannot read strategy {arg!r}: {exc}") from exc
    except ScheduleError as exc:
        raise CliError(f"{arg}: {exc}") from exc


def _engine_options(args) -> EngineOptions:
    return EngineOptions(
        max_iterations=args.max_iters,
        tolerance=args.tol,
        normalize_messages=not getattr(args, "no_normalize", False),
        time_limit=getattr(args, "time_limit", None),
    )


def _open_out(path: Optional[str]):
    if path is None or path == "-":
        return sys.stdout, False
    return open(path, "w", encoding="utf-8", newline=""), True


def _write_csv(path: Optional[str], header: list[str], rows) -> None:
    handle, owned = _open_out(path)
    try:
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows(rows)
    finally:
        if owned:
            handle.close()


def cmd_infer(args) -> int:
    graph = _load_graph(args.graph)
    strategy = _load_strategy(args.strategy)
    try:
        compiled = strategy.compile(graph)
        result = engine.run(graph, compiled, _engine_options(args), workers=args.workers)
    except ScheduleError as exc:
        raise CliError(str(exc)) from exc
    flag = int(result.converged)
    _write_csv(
        args.out,
        ["var", "p0", "p1", "converged_flag"],
        (
            (v, f"{result.marginals[v, 0]:.17g}", f"{result.marginals[v, 1]:.17g}", flag)
            for v in range(graph.num_variables)
        ),
    )
    print(
        f"iterations={result.iterations} converged={result.converged} "
        f"last_delta={result.last_delta:.3e}",
        file=sys.stderr,
    )
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def cmd_schedule(args) -> int:
    graph = _load_graph(args.graph)
    strategy = _load_strategy(args.strategy)
    try:
        poset = strategy.build_poset(graph)
        compiled = sched.compile_schedule(graph, poset)
    except ScheduleError as exc:
        raise CliError(str(exc)) from exc
    sizes = [len(batch) for batch in compiled.s_batches]
    print(f"k={compiled.num_batches}, sizes={sizes}")
    if args.full:
        for i, (s_batch, t_batch) in enumerate(
            zip(compiled.s_batches, compiled.t_batches), start=1
        ):
            print(f"s_{i}: " + " ".join(str(e) for e in s_batch))
            print(f"t_{i}: " + " ".join(str(e) for e in t_batch))
    if args.verify:
        violations = sched.verify_batches(poset, compiled.s_batches)
        flat = [e for batch in compiled.s_batches for e in batch]
        if sorted(flat) != graph.edge_list() or len(set(flat)) != len(flat):
            print("verify: batches do not partition the edge set", file=sys.stderr)
            return EXIT_CHECK_FAILED
        if violations:
            for edge, dep in violations[:10]:
                print(f"verify: {edge} scheduled before its dependency {dep}", file=sys.stderr)
            return EXIT_CHECK_FAILED
        print("verify: ok")
    return EXIT_OK


def cmd_dump_store(args) -> int:
    graph = _load_graph(args.graph)
    store = storage.initialize(graph)
    if args.iters > 0:
        strategy = _load_strategy(args.strategy)
        compiled = strategy.compile(graph)
        for _ in range(args.iters):
            for s_batch, t_batch in zip(compiled.s_batches, compiled.t_batches):
                engine.update_vtof_batch(store, list(t_batch))
                engine.update_ftov_batch(store, list(s_batch))
    _write_csv(
        args.out,
        ["direction", "row", "slot", "m0", "m1"],
        (
            (direction, row, slot, f"{m0:.17g}", f"{m1:.17g}")
            for direction, row, slot, m0, m1 in store.dump_rows()
        ),
    )
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = synth.SynthSpec(
        num_tuples=args.tuples,
        num_clauses=args.clauses,
        max_premises=args.max_premises,
        seed=args.seed,
        tree_only=args.tree,
    )
    try:
        graph, alarms = synth.generate(spec)
    except synth.SynthError as exc:
        raise CliError(str(exc)) from exc
    with open(args.out, "w", encoding="utf-8") as handle:
        handle.write(graph.to_fastfg())
    if args.alarms_out:
        with open(args.alarms_out, "w", encoding="utf-8") as handle:
            handle.write(ranking.alarms_to_text(alarms))
    print(
        f"vars={graph.num_variables} factors={graph.num_factors} "
        f"edges={graph.num_edges} alarms={len(alarms)}"
    )
    return EXIT_OK


def cmd_rank(args) -> int:
    graph = _load_graph(args.graph)
    try:
        with open(args.alarms, "r", encoding="utf-8") as handle:
            alarms = ranking.parse_alarms(handle.read())
    except (OSError, ValueError) as exc:
        raise CliError(f"alarm file: {exc}") from exc
    strategy = _load_strategy(args.strategy)
    try:
        trace = ranking.interaction_loop(
            graph, alarms, strategy, _engine_options(args), workers=args.workers
        )
    except (ValueError, UnderflowError) as exc:
        raise CliError(str(exc)) from exc
    _write_csv(
        args.out_trace,
        ["round", "alarm", "label", "p_true", "seconds"],
        (
            (i, r.alarm, int(r.label), f"{r.p_true:.17g}", f"{r.seconds:.6f}")
            for i, r in enumerate(trace.rounds, start=1)
        ),
    )
    if args.out_roc:
        _write_csv(args.out_roc, ["round", "cum_false", "cum_true"], trace.roc_points())
    metrics = ranking.compute_metrics(trace)
    print(
        f"rounds={len(trace.rounds)} rank100T={metrics.rank_100t} "
        f"rank90T={metrics.rank_90t} inversions={metrics.inversions} "
        f"auc={metrics.auc:.6f}"
    )
    return EXIT_OK


def _is_tree(graph: FactorGraph) -> bool:
    try:
        sched.topo_poset(graph)
        return True
    except ScheduleError:
        return False


def cmd_oracle_check(args) -> int:
    graph = _load_graph(args.graph)
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    failed = False

    # Closed-form kernels vs full-table sums on random incoming messages.
    message_tol = args.tol if args.tol is not None else MESSAGE_CHECK_TOL
    deviation = 0.0
    factors = [f for f in graph.factors if f.degree <= oracle.MAX_TABLE_DEGREE]
    if not factors:
        raise CliError("no factor is small enough for the table oracle")
    for _ in range(args.trials):
        factor = factors[int(rng.integers(0, len(factors)))]
        target = int(rng.integers(0, factor.degree))
        incoming = [
            (float(rng.uniform(0.05, 1.0)), float(rng.uniform(0.05, 1.0)))
            for _ in range(factor.degree)
        ]
        got = engine.closed_form_message(
            factor.kind, factor.p1, factor.p2, incoming, target
        )
        want = oracle.naive_factor_message(
            oracle.materialize_table(factor), incoming, target
        )
        deviation = max(deviation, _relative_gap(got, want))
    print(f"factor messages: max relative deviation {deviation:.3e} over {args.trials} trials")
    worst = max(worst, deviation)
    failed |= deviation > message_tol

    # Exact enumeration on small trees (loopy graphs are legitimately approximate).
    if graph.num_variables <= oracle.MAX_ENUM_VARIABLES and _is_tree(graph):
        tree_tol = args.tol if args.tol is not None else TREE_CHECK_TOL
        compiled = Strategy.parall().compile(graph)
        result = engine.run(graph, compiled, EngineOptions())
        exact = oracle.exact_marginals(graph)
        gap = float(np.max(np.abs(result.marginals[:, 1] - exact[:, 1])))
        print(f"tree marginals vs enumeration: max deviation {gap:.3e}")
        worst = max(worst, gap)
        failed |= gap > tree_tol

    # Batched engine vs sequential replay of the requested strategy.
    if args.strategy is not None:
        if graph.num_edges > 2000:
            print("schedule check skipped: graph too large for the sequential reference")
        else:
            schedule_tol = args.tol if args.tol is not None else SCHEDULE_CHECK_TOL
            strategy = _load_strategy(args.strategy)
            poset = strategy.build_poset(graph)
            options = EngineOptions(max_iterations=5, tolerance=0.0, record_history=True)
            batched = engine.run(graph, sched.compile_schedule(graph, poset), options)
            reference = oracle.sequential_reference(graph, poset, options)
            gap = max(
                float(np.max(np.abs(b[:, 1] - r[:, 1])))
                for b, r in zip(batched.history, reference.history)
            )
            print(f"batched vs sequential reference: max deviation {gap:.3e}")
            worst = max(worst, gap)
            failed |= gap > schedule_tol

    print(f"max observed deviation: {worst:.3e}")
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def _relative_gap(got: tuple[float, float], want: tuple[float, float]) -> float:
    gs, ws = got[0] + got[1], want[0] + want[1]
    gap = 0.0
    for g, w in zip(got, want):
        gn = g / gs if gs > 0 else 0.0
        wn = w / ws if ws > 0 else 0.0
        gap = max(gap, abs(gn - wn) / max(abs(wn), 1e-30))
    return gap


def cmd_bench(args) -> int:
    if args.graph:
        graph = _load_graph(args.graph)
        label = os.path.basename(args.graph)
    else:
        spec = synth.SynthSpec(
            num_tuples=args.tuples, num_clauses=args.clauses, seed=args.seed
        )
        graph, _ = synth.generate(spec)
        label = f"synth-t{args.tuples}-c{args.clauses}-s{args.seed}"

    naive_mults = closed_mults = ""
    if args.naive:
        arity = args.naive_arity
        incoming = [(0.5, 0.5)] * (arity + 1)
        counter = OpCounter()
        engine.closed_form_message(FactorKind.AND, 0.9, 0.0, incoming, 0, counter)
        closed_mults = counter.count
        table_factor = Factor(FactorKind.AND, 0, tuple(range(1, arity + 1)), 0.9, 0.0)
        counter = OpCounter()
        oracle.naive_factor_message(
            oracle.materialize_table(table_factor), incoming, 0, counter
        )
        naive_mults = counter.count
        print(
            f"per-message multiplies at arity {arity}: closed-form {closed_mults}, "
            f"naive {naive_mults}"
        )

    rows = []
    options = EngineOptions(max_iterations=args.iters, tolerance=args.tol)
    for name in args.strategies.split(","):
        strategy = _load_strategy(name.strip())
        compiled = strategy.compile(graph)
        updates_per_iter = sum(len(s) for s in compiled.s_batches) + sum(
            len(t) for t in compiled.t_batches
        )
        for repeat in range(args.repeats):
            started = time.perf_counter()
            result = engine.run(graph, compiled, options, workers=args.workers)
            elapsed = time.perf_counter() - started
            throughput = updates_per_iter * result.iterations / max(elapsed, 1e-9)
            rows.append(
                (
                    label,
                    name.strip(),
                    repeat,
                    result.iterations,
                    f"{elapsed:.6f}",
                    f"{throughput:.1f}",
                    int(result.converged),
                    closed_mults,
                    naive_mults,
                )
            )
    _write_csv(
        args.out,
        [
            "graph",
            "strategy",
            "repeat",
            "iterations",
            "wall_seconds",
            "messages_per_second",
            "converged",
            "closed_mults",
            "naive_mults",
        ],
        rows,
    )
    return EXIT_OK


def _add_shared(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--workers", type=int, default=1, help="0 = one per CPU")
    parser.add_argument("--tol", type=float, default=None)
    parser.add_argument("--max-iters", type=int, default=1000)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hornbp",
        description="Belief propagation on AND/OR factor graphs with batched update strategies",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("infer", help="run inference and write marginals")
    p.add_argument("--graph", required=True)
    p.add_argument("--strategy", default="PARALL")
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--time-limit", type=float, default=None)
    p.add_argument("--out", default="-")
    _add_shared(p)
    p.set_defaults(func=cmd_infer, tol=1e-9)

    p = sub.add_parser("schedule", help="compile a strategy and report batches")
    p.add_argument("--graph", required=True)
    p.add_argument("--strategy", default="PARALL")
    p.add_argument("--full", action="store_true")
    p.add_argument("--verify", action="store_true")
    _add_shared(p)
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("oracle-check", help="compare the engine against brute-force references")
    p.add_argument("--graph", required=True)
    p.add_argument("--strategy", default=None)
    p.add_argument("--trials", type=int, default=200)
    _add_shared(p)
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("synth", help="generate a synthetic graph and alarm file")
    p.add_argument("--tuples", type=int, required=True)
    p.add_argument("--clauses", type=int, required=True)
    p.add_argument("--max-premises", type=int, default=8)
    p.add_argument("--tree", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--alarms-out", default=None)
    _add_shared(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("rank", help="replay the interactive alarm-ranking loop")
    p.add_argument("--graph", required=True)
    p.add_argument("--alarms", required=True)
    p.add_argument("--strategy", default="PARALL")
    p.add_argument("--out-trace", default="-")
    p.add_argument("--out-roc", default=None)
    _add_shared(p)
    p.set_defaults(func=cmd_rank, tol=1e-9)

    p = sub.add_parser("bench", help="time strategies on a graph")
    p.add_argument("--graph", default=None)
    p.add_argument("--tuples", type=int, default=1000)
    p.add_argument("--clauses", type=int, default=1200)
    p.add_argument("--strategies", default="PARALL")
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--naive", action="store_true")
    p.add_argument("--naive-arity", type=int, default=16)
    p.add_argument("--out", default="-")
    _add_shared(p)
    p.set_defaults(func=cmd_bench, tol=0.0)

    p = sub.add_parser("dump-store", help="dump message buffers as CSV")
    p.add_argument("--graph", required=True)
    p.add_argument("--strategy", default="PARALL")
    p.add_argument("--iters", type=int, default=0)
    p.add_argument("--out", default="-")
    _add_shared(p)
    p.set_defaults(func=cmd_dump_store)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.tol is None and args.command in ("infer", "rank"):
        args.tol = 1e-9
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (GraphError, ScheduleError, storage.StorageError, synth.SynthError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except UnderflowError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
