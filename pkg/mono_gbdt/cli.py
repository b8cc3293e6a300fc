"""
mono_gbdt/cli.py — Command-line interface for training and the constraint experiments.

Usage:
    # Download Adult and write the prepared CSV + schema
    python -m mono_gbdt prep-adult --download --out ./mono_output

    # Train one model and write model.json + staged_metrics.csv
    python -m mono_gbdt train --data ./mono_output/adult_prepared.csv --method fast

    # Monte-Carlo comparison of every method
    python -m mono_gbdt mc-benchmark --data ./mono_output/adult_prepared.csv --trials 5

    # The four-cluster demonstration (no data needed)
    python -m mono_gbdt figure-example
"""
from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

from mono_gbdt.config import CONFIG_KEYS, OUTPUT_DIR, CheckStatus, ResolvedRun, RunSpec, resolve_run
from mono_gbdt.errors import MonoGBDTError, ParameterError
from mono_gbdt.experiments import (
    run_evaluate,
    run_export_trees,
    run_figure_example,
    run_gamma_sweep,
    run_mc_benchmark,
    run_penalty_table,
    run_prep_adult,
    run_time_benchmark,
    run_train,
)
from mono_gbdt.reporter import print_checks, print_table


def _resolve(args) -> ResolvedRun:
    overrides = {
        key: value for key, value in vars(args).items()
        if key in CONFIG_KEYS and key != "out" and value is not None
    }
    return resolve_run(RunSpec(args.command, args.config, overrides, args.out))


def cmd_prep_adult(args) -> int:
    """Handle the 'prep-adult' subcommand."""
    csv_path, schema_path = run_prep_adult(_resolve(args))
    print(f"📄 Schema: {schema_path}")
    return 0


def cmd_train(args) -> int:
    run = _resolve(args)
    print(f"\n🌲 Training {run.booster.iterations} trees ({run.booster.monotone_method.value}, "
          f"γ={run.booster.monotone_penalty:g}) ...")
    model_path, staged_path = run_train(run)
    print(f"💾 Model: {model_path}")
    print(f"📊 Staged metrics: {staged_path}")
    return 0


def cmd_evaluate(args) -> int:
    scores = run_evaluate(_resolve(args))
    for name, value in scores.items():
        print(f"   {name:>10}: {value:.6f}")
    return 0


def cmd_mc_benchmark(args) -> int:
    run = _resolve(args)
    result = run_mc_benchmark(run)
    last = result["average"]
    last = last[last["iteration"] == last["iteration"].max()]
    print_table("Trial-averaged metrics at the last iteration", last)
    print(f"📊 Per-trial CSV: {result['trials_path']}")
    print(f"📊 Averaged CSV: {result['average_path']}")
    print(f"📄 Report saved: {result['report_path']}")
    return 0


def cmd_gamma_sweep(args) -> int:
    heatmap = run_gamma_sweep(_resolve(args))
    print_table("Relative train-loss change vs γ=0", heatmap)
    return 0


def cmd_time_benchmark(args) -> int:
    timing, checks = run_time_benchmark(_resolve(args))
    print_table("Time per boosting iteration", timing)
    print_checks("TIMING RATIOS", checks)
    return 0


def cmd_penalty_table(args) -> int:
    table = run_penalty_table(_resolve(args))
    print_table("Penalty factor by γ (rows) and depth (columns)", table)
    return 0


def cmd_export_trees(args) -> int:
    paths = run_export_trees(_resolve(args))
    for path in paths:
        print(f"🌳 {path}")
    return 0


def cmd_figure_example(args) -> int:
    values, checks = run_figure_example(_resolve(args))
    print_checks("FOUR-CLUSTER EXAMPLE — blue cluster prediction", checks)
    return 1 if any(c.status is CheckStatus.FAIL for c in checks) else 0


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON or YAML config file (flags override it)")
    p.add_argument("--out", "-o", default=None, help=f"Output directory (default: {OUTPUT_DIR})")
    p.add_argument("--data", help="Prepared CSV (default: Adult from MONO_GBDT_ADULT_DIR)")
    p.add_argument("--schema", help="JSON feature schema override")
    p.add_argument("--label", help="Label column of --data (default: income)")
    p.add_argument("--model", help="Model JSON path")
    p.add_argument("--download", action="store_true", default=None, help="Fetch Adult if missing")
    p.add_argument("--method", help="none|basic|fast|slow, comma-separated for benchmarks")
    p.add_argument("--gamma", help="Monotone penalty γ, comma-separated for sweeps")
    p.add_argument("--epsilon", type=float, help="Penalty ε (default 1e-10)")
    p.add_argument("--monotone-constraints", dest="monotone_constraints",
                   help="Per-feature directions, e.g. 1,0,-1")
    p.add_argument("--objective", help="binary or l2")
    p.add_argument("--trials", type=int, help="Monte-Carlo trials (default 5)")
    p.add_argument("--train-ratio", dest="train_ratio", type=float, help="Train fraction (default 0.65)")
    p.add_argument("--iterations", type=int, help="Boosting iterations (default 100)")
    p.add_argument("--learning-rate", dest="learning_rate", type=float, help="Shrinkage (default 0.1)")
    p.add_argument("--num-leaves", dest="num_leaves", type=int, help="Leaves per tree (default 32)")
    p.add_argument("--max-depth", dest="max_depth", type=int, help="Depth cap (default 5)")
    p.add_argument("--min-data-in-leaf", dest="min_data_in_leaf", type=int, help="Rows per leaf (default 100)")
    p.add_argument("--lambda", dest="lambda", type=float, help="L2 leaf regularization (default 0)")
    p.add_argument("--max-bins", dest="max_bins", type=int, help="Bins per feature (default 255)")
    p.add_argument("--seed", type=int, help="Seed (default 42)")
    p.add_argument("--sizes", help="Timing sizes, e.g. 2000,10000,full")
    p.add_argument("--reps", type=int, help="Timing repetitions (default 100)")
    p.add_argument("--checkpoints", help="γ-sweep iterations, e.g. 10,25,50")
    p.add_argument("--first-k-trees", dest="first_k_trees", type=int, help="Trees to export (default 2)")
    p.add_argument("--jobs", type=int, help="Parallel Monte-Carlo trials (default 1)")
    p.add_argument("--verbose", "-v", action="store_true", help="Debug logging")


SUBCOMMANDS = {
    "prep-adult": (cmd_prep_adult, "Preprocess Adult into a prepared CSV + schema"),
    "train": (cmd_train, "Train one model"),
    "evaluate": (cmd_evaluate, "Score a model on a prepared CSV"),
    "mc-benchmark": (cmd_mc_benchmark, "Monte-Carlo comparison of methods and γ values"),
    "gamma-sweep": (cmd_gamma_sweep, "Relative train loss of γ values vs γ=0"),
    "time-benchmark": (cmd_time_benchmark, "Time one boosting iteration per method"),
    "penalty-table": (cmd_penalty_table, "Print the depth penalty for several γ"),
    "export-trees": (cmd_export_trees, "Write the first trees of a model as DOT"),
    "figure-example": (cmd_figure_example, "Four-cluster demonstration of the methods"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mono_gbdt",
        description="🌲 Gradient boosting with monotone constraints",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s prep-adult --download
  %(prog)s mc-benchmark --data mono_output/adult_prepared.csv --method none,basic,fast,slow
  %(prog)s gamma-sweep --data mono_output/adult_prepared.csv --method fast --gamma 0,0.5,1,1.5,2
  %(prog)s figure-example
        """,
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, (handler, help_text) in SUBCOMMANDS.items():
        p = subparsers.add_parser(name, help=help_text)
        _add_common(p)
        p.set_defaults(func=handler, subparser=p)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> None:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        code = args.func(args)
    except ParameterError as e:
        args.subparser.print_usage(sys.stderr)
        print(f"❌ {e}", file=sys.stderr)
        sys.exit(2)
    except MonoGBDTError as e:
        print(f"❌ {e}", file=sys.stderr)
        sys.exit(1)
    sys.exit(code)


if __name__ == "__main__":
    main()
