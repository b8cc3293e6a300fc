"""
tests/test_experiments.py — The run_* operations on small synthetic data, plus Adult checks
that only run when MONO_GBDT_ADULT_DIR holds adult.data and adult.test.

Run: python -m pytest tests/ -v
"""
import os
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from mono_gbdt import experiments
from mono_gbdt.boosting import predict, train
from mono_gbdt.config import BoosterConfig, CheckStatus, ConstraintMode, FeatureKind, RunSpec, resolve_run
from mono_gbdt.constraints import penalty
from mono_gbdt.dataset import (
    FeatureSchema,
    FeatureSpec,
    RawTable,
    bin_features,
    load_adult,
    load_prepared,
    one_hot_encode,
    preprocess_adult,
    save_prepared,
)
from mono_gbdt.errors import ParameterError
from mono_gbdt.experiments import (
    FIGURE_EXPECTED,
    PENALTY_GAMMAS,
    figure_example_dataset,
    figure_example_growers,
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

ADULT_DIR = os.environ.get("MONO_GBDT_ADULT_DIR", "")
HAS_ADULT = bool(ADULT_DIR) and all((Path(ADULT_DIR) / f).is_file() for f in ("adult.data", "adult.test"))

SMALL_MODEL = {"iterations": 3, "num_leaves": 4, "max_depth": 3, "min_data_in_leaf": 5, "max_bins": 16}


def _write_prepared(directory, n_rows=200, seed=0) -> str:
    rng = np.random.default_rng(seed)
    age = rng.integers(18, 80, n_rows).astype(float)
    hours = rng.integers(1, 60, n_rows).astype(float)
    score = 0.06 * (age - 45) + 0.05 * (hours - 30) + rng.normal(size=n_rows)
    raw = RawTable(pd.DataFrame({"age": age, "hours": hours, "income": (score > 0).astype(float)}))
    schema = FeatureSchema(
        {"age": FeatureSpec(FeatureKind.CONTINUOUS, 1), "hours": FeatureSpec(FeatureKind.CONTINUOUS, 0)},
        label="income",
    )
    csv_path, _ = save_prepared(raw, schema, Path(directory) / "prepared.csv")
    return str(csv_path)


def _make_run(tmp_path, subcommand="train", **overrides):
    settings = dict(SMALL_MODEL, data=_write_prepared(tmp_path))
    settings.update(overrides)
    return resolve_run(RunSpec(subcommand, None, settings, str(tmp_path / "out")))


# ────────────────────── Four-cluster demonstration ──────────────────────

class TestFigureExample:

    def test_blue_cluster_values(self):
        values, checks = run_figure_example()
        for mode, expected in FIGURE_EXPECTED.items():
            assert values[mode] == pytest.approx(expected, abs=1e-9)
        assert all(c.status is CheckStatus.PASS for c in checks)
        assert len(checks) == 4

    def test_writes_csv(self, tmp_path):
        run_figure_example(_make_run(tmp_path, "figure-example"))
        frame = pd.read_csv(tmp_path / "out" / "figure_example.csv")
        assert list(frame["method"]) == ["none", "basic", "fast", "slow"]

    def test_dataset_layout(self):
        binned = figure_example_dataset()
        assert binned.n_rows == 80
        assert binned.directions.tolist() == [1, 0]
        assert binned.labels.mean() == pytest.approx(0.4125)

    def test_every_tree_has_four_leaves(self):
        for grower in figure_example_growers().values():
            assert grower.tree.n_leaves == 4


# ────────────────────── Penalty table ──────────────────────

class TestPenaltyTable:

    def test_default_grid(self, tmp_path):
        table = run_penalty_table(_make_run(tmp_path, "penalty-table"))
        assert table["gamma"].tolist() == list(PENALTY_GAMMAS)
        assert list(table.columns) == ["gamma", "d0", "d1", "d2", "d3"]
        row = table[table["gamma"] == 0.5].iloc[0]
        assert row["d0"] == pytest.approx(0.5)
        assert row["d3"] == pytest.approx(0.9375)
        assert (tmp_path / "out" / "penalty_table.csv").exists()

    def test_explicit_gamma_and_depth(self, tmp_path):
        table = run_penalty_table(_make_run(tmp_path, "penalty-table", gamma="3", max_depth=5))
        assert table["gamma"].tolist() == [3.0]
        assert [table.iloc[0][f"d{d}"] for d in range(6)] == [penalty(3.0, d) for d in range(6)]
        assert table.iloc[0]["d2"] == 0.0
        assert table.iloc[0]["d3"] == pytest.approx(0.5)


# ────────────────────── Train / evaluate / export ──────────────────────

class TestTrainEvaluateExport:

    def test_train_writes_model_and_staged_metrics(self, tmp_path):
        model_path, staged_path = run_train(_make_run(tmp_path))
        assert Path(model_path).name == "model.json"
        staged = pd.read_csv(staged_path)
        assert staged["iteration"].max() == 3
        assert set(staged["metric"]) == {"logloss", "accuracy", "auc"}

    def test_evaluate(self, tmp_path):
        run = _make_run(tmp_path, method="fast")
        run_train(run)
        scores = run_evaluate(run)
        assert set(scores) == {"logloss", "accuracy", "auc"}
        assert 0.0 <= scores["accuracy"] <= 1.0

    def test_export_first_k_trees(self, tmp_path):
        run = _make_run(tmp_path, first_k_trees=2)
        run_train(run)
        paths = run_export_trees(run)
        assert [Path(p).name for p in paths] == ["tree_0.dot", "tree_1.dot"]
        assert Path(paths[0]).read_text(encoding="utf-8").startswith("digraph tree_0")

    def test_export_caps_at_tree_count(self, tmp_path):
        run = _make_run(tmp_path, iterations=1, first_k_trees=5)
        run_train(run)
        assert len(run_export_trees(run)) == 1


# ────────────────────── Monte-Carlo benchmark ──────────────────────

class TestMcBenchmark:

    def test_tables(self, tmp_path):
        result = run_mc_benchmark(_make_run(tmp_path, "mc-benchmark", trials=1, method="none,basic"))
        average, trials = result["average"], result["trials"]
        assert len(average) == 3 * 3 * 2
        assert {"basic_g0", "none_g0", "none_g0_diff", "none_g0_ratio"} <= set(average.columns)
        assert "basic_g0_diff" not in average.columns
        assert len(trials) == 2 * 3 * 3 * 2
        basic = trials[trials["method"] == "basic"]
        assert (basic["rel_diff"] == 0.0).all()
        for key in ("trials_path", "average_path", "report_path"):
            assert Path(result[key]).exists()

    def test_reference_always_included(self, tmp_path):
        result = run_mc_benchmark(_make_run(tmp_path, "mc-benchmark", trials=1, method="slow", iterations=2))
        assert set(result["trials"]["method"]) == {"basic", "slow"}

    def test_trials_are_deterministic(self, tmp_path):
        run = _make_run(tmp_path, "mc-benchmark", trials=2, method="fast")
        first = run_mc_benchmark(run)["average"]
        second = run_mc_benchmark(run)["average"]
        pd.testing.assert_frame_equal(first, second)

    def test_empty_gamma_list(self, tmp_path):
        with pytest.raises(ParameterError, match="gamma list is empty"):
            run_mc_benchmark(_make_run(tmp_path, "mc-benchmark", trials=1, gamma=""))

    def test_zero_trials(self, tmp_path):
        with pytest.raises(ParameterError):
            run_mc_benchmark(_make_run(tmp_path, "mc-benchmark", trials=0))


# ────────────────────── γ sweep ──────────────────────

class TestGammaSweep:

    def test_heatmap(self, tmp_path):
        run = _make_run(tmp_path, "gamma-sweep", trials=1, method="fast", gamma="0,1",
                        checkpoints="1,2", iterations=None)
        heatmap = run_gamma_sweep(run)
        assert list(heatmap.columns) == ["gamma", "iteration", "relative_change", "mean_logloss"]
        assert len(heatmap) == 4
        assert (heatmap[heatmap["gamma"] == 0.0]["relative_change"] == 0.0).all()
        assert (tmp_path / "out" / "gamma_sweep.csv").exists()

    def test_explicit_empty_gamma_list(self, tmp_path):
        with pytest.raises(ParameterError, match="gamma list is empty"):
            run_gamma_sweep(_make_run(tmp_path, "gamma-sweep", trials=1, gamma=""))

    def test_checkpoints_beyond_explicit_iterations(self, tmp_path):
        with pytest.raises(ParameterError):
            run_gamma_sweep(_make_run(tmp_path, "gamma-sweep", checkpoints="10", iterations=2))


# ────────────────────── Timing ──────────────────────

class TestTimeBenchmark:

    def test_rows_and_checks(self, tmp_path):
        run = _make_run(tmp_path, "time-benchmark", sizes="50,full", reps=2, method="basic,fast")
        timing, checks = run_time_benchmark(run)
        assert len(timing) == 4
        assert timing["rows"].tolist() == [50, 50, 200, 200]
        assert (timing[timing["method"] == "basic"]["ratio_to_basic"] == 1.0).all()
        assert len(checks) == 2
        assert all(c.status in (CheckStatus.PASS, CheckStatus.WARN) for c in checks)

    def test_basic_added_when_missing(self, tmp_path):
        timing, _ = run_time_benchmark(_make_run(tmp_path, "time-benchmark", sizes="full", reps=1, method="slow"))
        assert timing["method"].tolist() == ["basic", "slow"]

    def test_zero_reps(self, tmp_path):
        with pytest.raises(ParameterError):
            run_time_benchmark(_make_run(tmp_path, "time-benchmark", reps=0))


# ────────────────────── Adult ──────────────────────

ADULT_SAMPLE = [
    "39, State-gov, 77516, Bachelors, 13, Never-married, Adm-clerical, Not-in-family, White, Male, 2174, 0, 40, United-States, <=50K",
    "50, Self-emp-not-inc, 83311, Bachelors, 13, Married-civ-spouse, Exec-managerial, Husband, White, Male, 0, 0, 13, United-States, >50K",
]


class TestPrepAdult:

    def test_writes_prepared_csv(self, tmp_path, monkeypatch):
        data_dir = tmp_path / "adult"
        data_dir.mkdir()
        (data_dir / "adult.data").write_text("\n".join(ADULT_SAMPLE) + "\n", encoding="utf-8")
        (data_dir / "adult.test").write_text("|1x3 Cross validator\n" + ADULT_SAMPLE[0] + ".\n", encoding="utf-8")
        monkeypatch.setattr(experiments, "ADULT_DATA_DIR", str(data_dir))

        run = resolve_run(RunSpec("prep-adult", None, {}, str(tmp_path / "out")))
        csv_path, schema_path = run_prep_adult(run)
        assert Path(schema_path).exists()
        raw, schema = load_prepared(csv_path)
        assert raw.n_rows == 3
        assert raw.frame["income"].tolist() == [0.0, 1.0, 0.0]
        assert schema.features["age"].monotone_direction == 1


@pytest.mark.skipif(not HAS_ADULT, reason="MONO_GBDT_ADULT_DIR does not hold adult.data and adult.test")
class TestAdultAcceptance:

    @staticmethod
    def _adult_run(tmp_path, monkeypatch, subcommand, **overrides):
        monkeypatch.setattr(experiments, "ADULT_DATA_DIR", ADULT_DIR)
        return resolve_run(RunSpec(subcommand, None, overrides, str(tmp_path)))

    def test_row_count(self):
        assert load_adult(ADULT_DIR).n_rows == 48842

    @pytest.mark.parametrize("mode", [ConstraintMode.BASIC, ConstraintMode.FAST, ConstraintMode.SLOW])
    def test_random_pairs_respect_directions(self, mode):
        raw, schema = one_hot_encode(*preprocess_adult(load_adult(ADULT_DIR)))
        binned = bin_features(raw, schema)
        config = BoosterConfig(iterations=10, monotone_method=mode)
        model, _ = train(binned, config, schema=schema, metrics=())

        rng = np.random.default_rng(0)
        base = raw.frame.iloc[rng.choice(raw.n_rows, 10_000, replace=False)].reset_index(drop=True)
        for name in ("age", "education_num", "hours_per_week"):
            bumped = base.copy()
            bumped[name] = bumped[name] + rng.integers(1, 20, len(base))
            low, high = predict(model, RawTable(base)), predict(model, RawTable(bumped))
            assert (high >= low).all(), name

    def test_fast_and_slow_beat_basic_on_train_loss(self, tmp_path, monkeypatch):
        run = self._adult_run(tmp_path, monkeypatch, "mc-benchmark",
                              method="basic,fast,slow", trials=5, iterations=300)
        average = run_mc_benchmark(run)["average"]
        train_loss = average[(average["metric"] == "logloss") & (average["split"] == "train")]
        window = train_loss[train_loss["iteration"].between(10, 300)]
        assert (window["fast_g0"] <= window["basic_g0"]).mean() >= 0.9

        at_50 = train_loss[train_loss["iteration"] == 50].iloc[0]
        best = min(at_50["fast_g0"], at_50["slow_g0"])
        assert (at_50["basic_g0"] - best) / at_50["basic_g0"] >= 0.0005

    def test_some_gamma_beats_zero_early(self, tmp_path, monkeypatch):
        run = self._adult_run(tmp_path, monkeypatch, "gamma-sweep",
                              method="fast", gamma="0,0.5,1,1.5,2", checkpoints="25", trials=5)
        heatmap = run_gamma_sweep(run)
        at_25 = heatmap[heatmap["iteration"] == 25]
        zero = at_25[at_25["gamma"] == 0.0]["mean_logloss"].iloc[0]
        assert (at_25[at_25["gamma"] > 0]["mean_logloss"] < zero).any()

    def test_iteration_time_ratios(self, tmp_path, monkeypatch):
        run = self._adult_run(tmp_path, monkeypatch, "time-benchmark",
                              method="basic,fast,slow", sizes="full", reps=100)
        timing, checks = run_time_benchmark(run)
        ratio = timing.set_index("method")["ratio_to_basic"]
        assert experiments.TIMING_TREE == {"max_depth": 10, "num_leaves": 40}
        assert timing["rows"].iloc[0] == 48842
        assert ratio["fast"] <= 1.5
        assert ratio["slow"] <= 4.0
        assert all(c.status is CheckStatus.PASS for c in checks)
