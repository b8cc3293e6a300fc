"""
mono_gbdt/experiments.py — The run_* operations behind each CLI subcommand.

Every function takes a ResolvedRun, writes its artifacts under ``run.output_dir`` and returns
the data it wrote so callers (the CLI, tests) can inspect it without re-reading files.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from timeit import default_timer as timer
from typing import Optional

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from mono_gbdt.boosting import evaluate, load_model, resolve_directions, save_model, train
from mono_gbdt.config import (
    ADULT_DATA_DIR,
    BoosterConfig,
    CheckResult,
    CheckStatus,
    ConstraintMode,
    FeatureKind,
    ObjectiveKind,
    ResolvedRun,
    TreeConfig,
)
from mono_gbdt.constraints import PenaltyParams, make_engine, penalty
from mono_gbdt.dataset import (
    BinnedDataset,
    FeatureSchema,
    FeatureSpec,
    RawTable,
    apply_schema_override,
    bin_features,
    download_adult,
    load_adult,
    load_prepared,
    load_schema_override,
    mc_split,
    one_hot_encode,
    preprocess_adult,
    save_prepared,
)
from mono_gbdt.errors import ParameterError
from mono_gbdt.objective import base_margin, grad_hess, relative_change
from mono_gbdt.reporter import to_markdown, write_csv
from mono_gbdt.tree import TreeGrower, export_dot

logger = logging.getLogger(__name__)

REFERENCE = (ConstraintMode.BASIC, 0.0)
PENALTY_GAMMAS = (0.0, 0.5, 1.0, 1.5, 2.0, 3.0)
TIMING_TREE = {"max_depth": 10, "num_leaves": 40}
TIMING_MIN_DATA_IN_LEAF = 20
FAST_TIME_BOUND = 1.5
SLOW_TIME_BOUND = 4.0
FIGURE_EXPECTED = {
    ConstraintMode.NONE: 0.7,
    ConstraintMode.BASIC: 0.45,
    ConstraintMode.FAST: 0.5,
    ConstraintMode.SLOW: 0.7,
}


def _column(method: ConstraintMode, gamma: float) -> str:
    return f"{method.value}_g{gamma:g}"


# ── Data ──


def load_dataset(run: ResolvedRun) -> tuple[RawTable, FeatureSchema]:
    """Prepared CSV when ``--data`` is given, otherwise Adult from the data directory."""
    if run.data:
        return load_prepared(run.data, run.schema, label=run.label)
    data_dir = Path(ADULT_DATA_DIR)
    if run.download:
        download_adult(data_dir)
    raw, schema = one_hot_encode(*preprocess_adult(load_adult(data_dir)))
    if run.schema:
        schema = apply_schema_override(schema, load_schema_override(run.schema))
    return raw, schema.validate(raw)


def load_binned(run: ResolvedRun) -> tuple[BinnedDataset, FeatureSchema]:
    raw, schema = load_dataset(run)
    return bin_features(raw, schema, run.booster.max_bins), schema


def run_prep_adult(run: ResolvedRun) -> tuple[str, str]:
    data_dir = Path(ADULT_DATA_DIR)
    if run.download:
        print(f"📥 Downloading Adult into {data_dir}")
        download_adult(data_dir)
    raw, schema = one_hot_encode(*preprocess_adult(load_adult(data_dir)))
    if run.schema:
        schema = apply_schema_override(schema, load_schema_override(run.schema))
    csv_path, schema_path = save_prepared(raw, schema, Path(run.output_dir) / "adult_prepared.csv")
    print(f"📄 {raw.n_rows} rows × {len(schema.features)} features → {csv_path}")
    return str(csv_path), str(schema_path)


def run_train(run: ResolvedRun) -> tuple[str, str]:
    binned, schema = load_binned(run)
    model, staged = train(binned, run.booster, schema=schema, log_every=10)
    out = Path(run.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    model_path = Path(run.model) if run.model else out / "model.json"
    save_model(model, model_path)
    staged_path = write_csv(staged, out / "staged_metrics.csv")
    return str(model_path), staged_path


def run_evaluate(run: ResolvedRun) -> dict[str, float]:
    model = load_model(run.model or Path(run.output_dir) / "model.json")
    raw, _ = load_dataset(run)
    return evaluate(model, raw)


# ── Monte-Carlo benchmark ──


def _combos(run: ResolvedRun) -> list[tuple[ConstraintMode, float]]:
    combos = [(m, float(g)) for m in run.bench.methods for g in run.bench.gammas]
    if REFERENCE not in combos:
        combos.insert(0, REFERENCE)
    return combos


def _mc_trial(
    binned: BinnedDataset,
    booster: BoosterConfig,
    combos: list[tuple[ConstraintMode, float]],
    train_ratio: float,
    trial: int,
    metrics: Optional[tuple[str, ...]] = None,
    with_test: bool = True,
) -> pd.DataFrame:
    plan = mc_split(binned.n_rows, train_ratio, trial)
    train_set, test_set = binned.subset(plan.train), binned.subset(plan.test)
    frames = []
    for method, gamma in combos:
        config = booster.with_changes(monotone_method=method, monotone_penalty=gamma)
        _, staged = train(train_set, config, staged_eval=test_set if with_test else None, metrics=metrics)
        staged.insert(0, "gamma", gamma)
        staged.insert(0, "method", method.value)
        staged.insert(0, "trial", trial)
        frames.append(staged)
    logger.info("trial %d done (%d runs)", trial, len(combos))
    return pd.concat(frames, ignore_index=True)


def run_trials(run: ResolvedRun, binned: BinnedDataset, combos, metrics=None, with_test=True) -> pd.DataFrame:
    """All trials, merged in trial order whatever the worker count."""
    trials = range(1, run.bench.trials + 1)
    args = (binned, run.booster, combos, run.bench.train_ratio)
    if run.bench.jobs > 1:
        frames = Parallel(n_jobs=run.bench.jobs)(
            delayed(_mc_trial)(*args, trial, metrics, with_test) for trial in trials
        )
    else:
        frames = [_mc_trial(*args, trial, metrics, with_test) for trial in trials]
    return pd.concat(frames, ignore_index=True)


def _with_reference(frame: pd.DataFrame, keys: list[str]) -> pd.DataFrame:
    """Attach the basic γ=0 value and both relative columns to every row."""
    ref = frame[(frame["method"] == REFERENCE[0].value) & (frame["gamma"] == REFERENCE[1])]
    ref = ref[keys + ["value"]].rename(columns={"value": "reference"})
    merged = frame.merge(ref, on=keys, how="left")
    merged["rel_diff"], merged["rel_ratio"] = relative_change(merged["value"], merged["reference"])
    return merged


def run_mc_benchmark(run: ResolvedRun) -> dict[str, pd.DataFrame | str]:
    """Trials × methods × γ; per-trial long CSV and a trial-averaged wide CSV."""
    if run.bench.trials <= 0:
        raise ParameterError(f"trials={run.bench.trials} must be >= 1")
    if not run.bench.gammas:
        raise ParameterError("gamma list is empty")
    binned, _ = load_binned(run)
    combos = _combos(run)
    print(f"🎲 {run.bench.trials} trial(s) × {len(combos)} configuration(s) on {binned.n_rows} rows")

    trials = _with_reference(
        run_trials(run, binned, combos), ["trial", "iteration", "metric", "split"]
    )
    keys = ["iteration", "metric", "split"]
    average = (
        trials.groupby(keys + ["method", "gamma"], sort=False)["value"].mean().reset_index()
    )
    wide = average.pivot(index=keys, columns=["method", "gamma"], values="value")
    columns = {}
    for method, gamma in combos:
        columns[_column(method, gamma)] = wide[(method.value, gamma)]
    summary = pd.DataFrame(columns).reset_index()
    ref_column = _column(*REFERENCE)
    for method, gamma in combos:
        if (method, gamma) == REFERENCE:
            continue
        name = _column(method, gamma)
        summary[f"{name}_diff"], summary[f"{name}_ratio"] = relative_change(summary[name], summary[ref_column])
    summary = summary.sort_values(keys, kind="stable").reset_index(drop=True)

    out = Path(run.output_dir)
    trials_path = write_csv(trials, out / "mc_trials.csv")
    average_path = write_csv(summary, out / "mc_average.csv")
    last = summary[summary["iteration"] == summary["iteration"].max()]
    report_path = to_markdown(
        "Monte-Carlo benchmark", {"Final iteration (trial mean)": last}, output_dir=str(out)
    )
    return {"trials": trials, "average": summary, "trials_path": trials_path,
            "average_path": average_path, "report_path": report_path}


# ── γ sweep ──


def run_gamma_sweep(run: ResolvedRun) -> pd.DataFrame:
    """Mean relative train-logloss change of each γ against γ=0, at each checkpoint."""
    gammas = [float(g) for g in run.bench.gammas]
    if not gammas:
        raise ParameterError("gamma list is empty")
    if run.bench.trials <= 0:
        raise ParameterError(f"trials={run.bench.trials} must be >= 1")
    checkpoints = list(run.bench.checkpoints)
    booster = run.booster
    if "iterations" in run.explicit:
        checkpoints = [c for c in checkpoints if c <= booster.iterations]
    else:
        booster = booster.with_changes(iterations=max(checkpoints))
    if not checkpoints:
        raise ParameterError("no checkpoint falls within the iteration count")

    method = booster.monotone_method
    combos = [(method, 0.0)] + [(method, g) for g in gammas if g != 0.0]
    binned, _ = load_binned(run)
    sweep = replace(run, booster=booster)
    print(f"🔥 γ sweep ({method.value}): {len(gammas)} value(s) × {len(checkpoints)} checkpoint(s)")

    metric = "logloss" if booster.objective is ObjectiveKind.BINARY else "mse"
    frame = run_trials(sweep, binned, combos, metrics=(metric,), with_test=False)
    frame = frame[frame["iteration"].isin(checkpoints)]
    ref = frame[frame["gamma"] == 0.0][["trial", "iteration", "value"]].rename(columns={"value": "reference"})
    frame = frame.merge(ref, on=["trial", "iteration"])
    frame["relative"] = relative_change(frame["value"], frame["reference"])[1]

    rows = []
    for gamma in gammas:
        for checkpoint in checkpoints:
            cell = frame[(frame["gamma"] == gamma) & (frame["iteration"] == checkpoint)]
            rows.append({
                "gamma": gamma,
                "iteration": checkpoint,
                "relative_change": float(cell["relative"].mean()),
                f"mean_{metric}": float(cell["value"].mean()),
            })
    heatmap = pd.DataFrame(rows)
    write_csv(heatmap, Path(run.output_dir) / "gamma_sweep.csv")
    return heatmap


# ── Timing ──


def time_one_iteration(
    binned: BinnedDataset, config: BoosterConfig, reps: int
) -> tuple[np.ndarray, dict[str, float]]:
    """Wall time of growing one tree ``reps`` times; the gradients are computed once."""
    gh = grad_hess(config.objective, np.full(binned.n_rows, base_margin(config.objective, binned.labels)), binned.labels)
    directions = resolve_directions(binned, config)
    tree_config = config.tree_config()
    penalty_cfg = PenaltyParams(config.monotone_penalty, config.penalty_epsilon)
    times = np.empty(reps)
    phases = {"histograms": 0.0, "split_finding": 0.0, "constraints": 0.0}
    for i in range(reps):
        start = timer()
        engine = make_engine(config.monotone_method, directions)
        grower = TreeGrower(binned, gh, tree_config, engine, penalty_cfg)
        grower.grow()
        times[i] = timer() - start
        for phase, seconds in grower.timings.items():
            phases[phase] += seconds
    return times, {phase: seconds / reps for phase, seconds in phases.items()}


def run_time_benchmark(run: ResolvedRun) -> tuple[pd.DataFrame, list[CheckResult]]:
    reps = run.bench.reps
    if reps <= 0:
        raise ParameterError(f"reps={reps} must be >= 1")
    changes = dict(TIMING_TREE, iterations=1)
    if "min_data_in_leaf" not in run.explicit:
        changes["min_data_in_leaf"] = TIMING_MIN_DATA_IN_LEAF
    booster = run.booster.with_changes(**changes)
    methods = list(dict.fromkeys([ConstraintMode.BASIC, *run.bench.methods]))
    binned, _ = load_binned(run)
    order = np.random.default_rng(booster.seed).permutation(binned.n_rows)

    rows = []
    for size in run.bench.sizes:
        n = binned.n_rows if size is None or size >= binned.n_rows else size
        subset = binned.subset(np.sort(order[:n]))
        for method in methods:
            times, phases = time_one_iteration(subset, booster.with_changes(monotone_method=method), reps)
            rows.append({
                "size": "full" if size is None else size,
                "rows": n,
                "method": method.value,
                "reps": reps,
                "mean_ms": times.mean() * 1e3,
                "std_ms": times.std(ddof=1) * 1e3 if reps > 1 else 0.0,
                "histograms_ms": phases["histograms"] * 1e3,
                "split_finding_ms": phases["split_finding"] * 1e3,
                "constraints_ms": phases["constraints"] * 1e3,
            })
            print(f"⏱️  size={rows[-1]['size']} method={method.value}: {rows[-1]['mean_ms']:.2f} ms")
    timing = pd.DataFrame(rows)
    basic = timing[timing["method"] == ConstraintMode.BASIC.value].set_index("size")["mean_ms"]
    timing["ratio_to_basic"] = timing["mean_ms"] / timing["size"].map(basic)

    checks = []
    for _, row in timing.iterrows():
        bound = {ConstraintMode.FAST.value: FAST_TIME_BOUND, ConstraintMode.SLOW.value: SLOW_TIME_BOUND}.get(row["method"])
        if bound is None:
            continue
        ok = row["ratio_to_basic"] <= bound
        checks.append(CheckResult(
            check_id=f"time-{row['method']}-{row['size']}",
            name=f"{row['method']} / basic at size {row['size']}",
            category="timing",
            status=CheckStatus.PASS if ok else CheckStatus.WARN,
            message=f"ratio {row['ratio_to_basic']:.2f} (bound {bound:g}×)",
        ))
    out = Path(run.output_dir)
    write_csv(timing, out / "time_benchmark.csv")
    to_markdown("Timing benchmark", {"Mean time per boosting iteration": timing}, checks,
                output_dir=str(out), stem="timing_report")
    return timing, checks


# ── Penalty table ──


def run_penalty_table(run: ResolvedRun) -> pd.DataFrame:
    gammas = run.bench.gammas if {"gamma", "gammas", "monotone_penalty"} & run.explicit else PENALTY_GAMMAS
    if not gammas:
        raise ParameterError("gamma list is empty")
    depths = range(run.booster.max_depth + 1)
    table = pd.DataFrame(
        [{"gamma": float(g), **{f"d{d}": penalty(float(g), d) for d in depths}} for g in gammas]
    )
    write_csv(table, Path(run.output_dir) / "penalty_table.csv")
    return table


# ── Four-cluster demonstration ──


@dataclass(frozen=True)
class Cluster:
    name: str
    size: int
    x: tuple[float, float]
    y: tuple[float, float]
    value: float


FIGURE_CLUSTERS = (
    Cluster("blue", 10, (0.1, 1.9), (0.1, 1.3), 0.7),
    Cluster("black", 40, (0.1, 1.9), (2.1, 3.9), 0.2),
    Cluster("red", 10, (2.1, 3.9), (0.1, 1.9), 0.8),
    Cluster("green", 20, (2.1, 3.9), (2.1, 3.9), 0.5),
)
FIGURE_CUTS = {"x": 2.0, "y_right": 2.0, "y_left": 1.5}


def figure_example_dataset() -> BinnedDataset:
    """Four noise-free clusters on [0, 4]², increasing in x."""
    frames = [
        pd.DataFrame({
            "x": np.linspace(*c.x, c.size),
            "y": np.linspace(*c.y, c.size),
            "target": np.full(c.size, c.value),
        })
        for c in FIGURE_CLUSTERS
    ]
    raw = RawTable(pd.concat(frames, ignore_index=True))
    schema = FeatureSchema(
        {"x": FeatureSpec(FeatureKind.CONTINUOUS, 1), "y": FeatureSpec(FeatureKind.CONTINUOUS, 0)},
        label="target",
    )
    return bin_features(raw, schema, max_bins=255)


def _threshold_bin(binned: BinnedDataset, feature: int, value: float) -> int:
    return int(np.searchsorted(binned.boundaries[feature], value, side="right")) - 1


def figure_example_growers(
    binned: Optional[BinnedDataset] = None, n_splits: int = 3
) -> dict[ConstraintMode, TreeGrower]:
    """Force the x split, then y on the right child, then y on the left child, under every
    method (l2, λ=0, learning rate 1). ``n_splits`` stops the sequence early."""
    binned = binned or figure_example_dataset()
    kind = ObjectiveKind.L2
    base = base_margin(kind, binned.labels)
    gh = grad_hess(kind, np.full(binned.n_rows, base), binned.labels)
    config = TreeConfig(num_leaves=4, max_depth=5, min_data_in_leaf=1, reg_lambda=0.0)
    x, y = list(binned.feature_names).index("x"), list(binned.feature_names).index("y")
    growers = {}
    for mode in ConstraintMode:
        grower = TreeGrower(binned, gh, config, make_engine(mode, binned.directions), PenaltyParams())
        steps = [
            (lambda t: 0, x, FIGURE_CUTS["x"]),
            (lambda t: t.nodes[0].right, y, FIGURE_CUTS["y_right"]),
            (lambda t: t.nodes[0].left, y, FIGURE_CUTS["y_left"]),
        ]
        for leaf_of, feature, value in steps[:n_splits]:
            grower.force_split(leaf_of(grower.tree), feature, _threshold_bin(binned, feature, value))
        growers[mode] = grower
    return growers


def run_figure_example(run: Optional[ResolvedRun] = None) -> tuple[dict[ConstraintMode, float], list[CheckResult]]:
    """Blue-cluster prediction per method, checked against 0.7 / 0.45 / 0.5 / 0.7."""
    binned = figure_example_dataset()
    base = base_margin(ObjectiveKind.L2, binned.labels)
    blue_row = binned.codes[0]
    values, checks = {}, []
    for mode, grower in figure_example_growers(binned).items():
        tree = grower.tree
        values[mode] = base + tree.nodes[tree.leaf_for(blue_row)].value
        expected = FIGURE_EXPECTED[mode]
        ok = abs(values[mode] - expected) <= 1e-9
        checks.append(CheckResult(
            check_id=f"figure-{mode.value}",
            name=f"{mode.value}: blue cluster prediction",
            category="figure-example",
            status=CheckStatus.PASS if ok else CheckStatus.FAIL,
            message=f"got {values[mode]:.12g}, expected {expected:g}",
            evidence=None if ok else f"difference {values[mode] - expected:.3g}",
        ))
    if run is not None:
        frame = pd.DataFrame(
            [{"method": m.value, "blue_value": v, "expected": FIGURE_EXPECTED[m]} for m, v in values.items()]
        )
        write_csv(frame, Path(run.output_dir) / "figure_example.csv")
    return values, checks


# ── Tree export ──


def run_export_trees(run: ResolvedRun) -> list[str]:
    model = load_model(run.model or Path(run.output_dir) / "model.json")
    out = Path(run.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, tree in enumerate(model.trees[: run.bench.first_k_trees]):
        path = out / f"tree_{i}.dot"
        path.write_text(export_dot(tree, name=f"tree_{i}"), encoding="utf-8")
        paths.append(str(path))
    return paths
