"""
tests/test_constraints.py — Depth penalty and the none/basic/fast/slow constraint engines.

Run: python -m pytest tests/ -v
"""
import itertools
import math

import numpy as np
import pytest

from mono_gbdt.boosting import train
from mono_gbdt.config import BoosterConfig, ConstraintMode, ObjectiveKind, TreeConfig
from mono_gbdt.constraints import (
    BasicEngine,
    FastEngine,
    NoneEngine,
    PenaltyParams,
    SlowEngine,
    bounds_for_split,
    make_engine,
    penalty,
    recompute_all_constraints,
)
from mono_gbdt.dataset import BinnedDataset
from mono_gbdt.errors import ParameterError
from mono_gbdt.experiments import figure_example_dataset, figure_example_growers
from mono_gbdt.objective import base_margin, grad_hess
from mono_gbdt.tree import SplitCandidate, Tree, TreeGrower, predict_binned

INF = math.inf
CONSTRAINED = [ConstraintMode.BASIC, ConstraintMode.FAST, ConstraintMode.SLOW]


def _make_candidate(left, right, feature=0, threshold=0, direction=0, leaf=0) -> SplitCandidate:
    return SplitCandidate(
        leaf=leaf, feature=feature, threshold=threshold, left_output=left, right_output=right,
        gain=1.0, penalized_gain=1.0, left_stats=(0.0, 0.0, 0), right_stats=(0.0, 0.0, 0),
        direction=direction,
    )


def _split_root(engine, left, right, n_bins=(4,)):
    tree = Tree.single_leaf(list(n_bins))
    engine.reset(tree)
    direction = int(engine.directions[0])
    candidate = _make_candidate(left, right, direction=direction)
    tree.split(0, candidate)
    return tree, engine.on_split(tree, 0, candidate)


def _make_monotone_data(seed, n_rows=300, n_bins=4) -> BinnedDataset:
    """Random non-monotone target so the constraints have work to do."""
    rng = np.random.default_rng(seed)
    n_features = int(rng.integers(2, 6))
    directions = np.zeros(n_features, dtype=np.int8)
    monotone = rng.choice(n_features, size=int(rng.integers(1, 3)), replace=False)
    directions[monotone] = rng.choice([-1, 1], size=monotone.size)
    codes = rng.integers(0, n_bins, size=(n_rows, n_features))
    tables = rng.normal(size=(n_features, n_bins))
    labels = tables[np.arange(n_features), codes].sum(axis=1) + rng.normal(scale=0.3, size=n_rows)
    labels += 0.5 * directions[0] * codes[:, 0]
    return BinnedDataset(
        feature_names=tuple(f"f{i}" for i in range(n_features)),
        codes=codes.astype(np.uint8),
        boundaries=tuple(np.arange(n_bins, dtype=float) for _ in range(n_features)),
        labels=labels,
        directions=directions,
    )


def _grower(binned, mode, num_leaves=12, max_depth=6, min_data_in_leaf=3) -> TreeGrower:
    base = base_margin(ObjectiveKind.L2, binned.labels)
    gh = grad_hess(ObjectiveKind.L2, np.full(binned.n_rows, base), binned.labels)
    config = TreeConfig(num_leaves=num_leaves, max_depth=max_depth, min_data_in_leaf=min_data_in_leaf)
    return TreeGrower(binned, gh, config, make_engine(mode, binned.directions), PenaltyParams())


def _replay(source: Tree, engine) -> Tree:
    """Re-execute ``source``'s splits, outputs included, against a fresh engine."""
    tree = Tree.single_leaf(source.n_bins)
    engine.reset(tree)
    internal = sorted((n for n in source.nodes if not n.is_leaf), key=lambda n: n.split_order)
    for node in internal:
        left, right = source.nodes[node.left], source.nodes[node.right]
        candidate = SplitCandidate(
            leaf=node.id, feature=node.feature, threshold=node.threshold,
            left_output=left.value, right_output=right.value,
            gain=node.gain, penalized_gain=node.penalized_gain,
            left_stats=(left.sum_grad, left.sum_hess, left.count),
            right_stats=(right.sum_grad, right.sum_hess, right.count),
            direction=node.monotone_direction,
        )
        tree.split(node.id, candidate)
        engine.on_split(tree, node.id, candidate)
    return tree


def _region_points(region):
    return itertools.product(*(range(lo, hi + 1) for lo, hi in zip(region.low, region.high)))


def _assert_monotone(predict, n_bins, directions) -> None:
    """Every one-bin step up a monotone feature moves the prediction the declared way."""
    grid = np.array(list(itertools.product(*(range(b) for b in n_bins))), dtype=np.int64)
    predictions = predict(grid)
    strides = np.cumprod([1] + list(n_bins[::-1]))[:-1][::-1]
    for f, s in enumerate(directions):
        if s == 0:
            continue
        lower = np.flatnonzero(grid[:, f] < n_bins[f] - 1)
        upper = lower + strides[f]
        step = (predictions[upper] - predictions[lower]) * s
        assert step.min(initial=0.0) >= 0.0, f"feature {f} violates direction {s}"


# ────────────────────── Penalty ──────────────────────

class TestPenalty:

    def test_zero_gamma_never_penalizes(self):
        assert all(penalty(0.0, d) == 1.0 for d in range(11))

    def test_root_forbidden_from_gamma_one(self):
        assert all(penalty(g, 0) == 0.0 for g in (1.0, 1.5, 2.0, 3.0, 7.5))

    @pytest.mark.parametrize("gamma,depth,expected", [
        (2.0, 2, 0.5),
        (0.5, 3, 0.9375),
        (1.0, 1, 0.5),
        (0.5, 0, 0.5),
        (2.0, 1, 0.0),
        (1.5, 1, 1.0 - 2.0 ** -0.5),
    ])
    def test_values(self, gamma, depth, expected):
        assert penalty(gamma, depth) == pytest.approx(expected, abs=1e-12)

    def test_shape_over_grid(self):
        gammas = np.linspace(0.0, 6.0, 50)
        table = np.array([[penalty(g, d) for d in range(11)] for g in gammas])
        assert ((table >= 0.0) & (table <= 1.0)).all()
        assert (np.diff(table, axis=1) >= -1e-12).all()   # non-decreasing in depth
        assert (np.diff(table, axis=0) <= 1e-12).all()    # non-increasing in gamma

    def test_negative_inputs(self):
        with pytest.raises(ParameterError):
            penalty(-0.1, 0)
        with pytest.raises(ParameterError):
            penalty(1.0, -1)

    def test_params_factor_adds_epsilon(self):
        assert PenaltyParams(gamma=1.0).factor(0) == 1e-10
        with pytest.raises(ParameterError):
            PenaltyParams(gamma=-1.0)
        with pytest.raises(ParameterError):
            PenaltyParams(epsilon=0.0)


# ────────────────────── None / basic ──────────────────────

class TestBasicEngine:

    def test_increasing_midpoint(self):
        engine = BasicEngine([1])
        _, report = _split_root(engine, 0.3, 0.6)
        assert engine.leaf_bounds(1) == (-INF, pytest.approx(0.45))
        assert engine.leaf_bounds(2) == (pytest.approx(0.45), INF)
        assert report.changed == set()
        assert not report.recomputed

    def test_decreasing_midpoint(self):
        engine = BasicEngine([-1])
        _split_root(engine, 0.6, 0.3)
        assert engine.leaf_bounds(1) == (pytest.approx(0.45), INF)
        assert engine.leaf_bounds(2) == (-INF, pytest.approx(0.45))

    def test_non_monotone_inherits(self):
        engine = BasicEngine([0])
        _split_root(engine, 0.3, 0.6)
        assert engine.leaf_bounds(1) == (-INF, INF)
        assert engine.leaf_bounds(2) == (-INF, INF)

    def test_none_engine_ignores_directions(self):
        engine = NoneEngine([1])
        assert engine.directions.tolist() == [0]
        tree, _ = _split_root(engine, 0.6, 0.3)
        assert bounds_for_split(engine, tree, 1, 0, 0) == ((-INF, INF), (-INF, INF))

    def test_make_engine(self):
        assert isinstance(make_engine("fast", [1]), FastEngine)
        with pytest.raises(ParameterError):
            make_engine("medium", [1])


# ────────────────────── Fast ──────────────────────

class TestFastEngine:

    def test_sibling_seeding(self):
        engine = FastEngine([1])
        _split_root(engine, 0.3, 0.6)
        assert engine.leaf_bounds(1) == (-INF, 0.6)
        assert engine.leaf_bounds(2) == (0.3, INF)

    def test_decreasing_sibling_seeding(self):
        engine = FastEngine([-1])
        _split_root(engine, 0.6, 0.3)
        assert engine.leaf_bounds(1) == (0.3, INF)
        assert engine.leaf_bounds(2) == (-INF, 0.6)

    def test_no_monotone_ancestors_empty_report(self):
        engine = FastEngine([0, 0])
        tree = Tree.single_leaf([3, 3])
        engine.reset(tree)
        first = _make_candidate(0.1, 0.2)
        tree.split(0, first)
        engine.on_split(tree, 0, first)
        second = _make_candidate(0.0, 0.3, feature=1, leaf=1)
        tree.split(1, second)
        assert engine.on_split(tree, 1, second).changed == set()

    def test_four_cluster_bounds(self):
        binned = figure_example_dataset()
        base = base_margin(ObjectiveKind.L2, binned.labels)
        after_one = figure_example_growers(binned, n_splits=1)[ConstraintMode.FAST]
        left = after_one.tree.nodes[0].left
        assert after_one.engine.leaf_bounds(left)[1] == pytest.approx(0.6 - base)

        after_two = figure_example_growers(binned, n_splits=2)[ConstraintMode.FAST]
        assert after_two.engine.leaf_bounds(left)[1] == pytest.approx(0.5 - base)
        y = binned.feature_names.index("y")
        assert bounds_for_split(after_two.engine, after_two.tree, left, y, 3) == (
            (-INF, pytest.approx(0.5 - base)), (-INF, pytest.approx(0.5 - base)),
        )


# ────────────────────── Slow ──────────────────────

class TestSlowEngine:

    def test_no_monotone_splits_stay_unbounded(self):
        engine = SlowEngine([0])
        _, report = _split_root(engine, 0.3, 0.6)
        assert engine.constraints[1].n_boxes == 0
        assert engine.constraints[2].n_boxes == 0
        assert report.changed == set()

    def test_sibling_seeding_boxes(self):
        engine = SlowEngine([1])
        _split_root(engine, 0.3, 0.6)
        assert engine.leaf_bounds(1) == (-INF, 0.6)
        assert engine.leaf_bounds(2) == (0.3, INF)

    def test_recompute_single_leaf(self):
        constraints = recompute_all_constraints(Tree.single_leaf([4, 4]), np.array([1, 0]))
        assert constraints[0].aggregate() == (-INF, INF)

    def test_recompute_without_monotone_pairs(self):
        tree = Tree.single_leaf([4, 4])
        candidate = _make_candidate(0.1, 0.9, feature=1, threshold=1)
        tree.split(0, candidate)
        constraints = recompute_all_constraints(tree, np.array([1, 0]))
        assert all(c.n_boxes == 0 for c in constraints.values())

    def test_four_cluster_segments(self):
        binned = figure_example_dataset()
        base = base_margin(ObjectiveKind.L2, binned.labels)
        grower = figure_example_growers(binned, n_splits=2)[ConstraintMode.SLOW]
        engine, tree = grower.engine, grower.tree
        left = tree.nodes[0].left
        y = binned.feature_names.index("y")
        cut = tree.nodes[tree.nodes[0].right].threshold

        assert engine.n_recomputations == 1
        segments = [s for s in engine.canonical(left) if s[0] == y]
        assert [(s[1], s[2]) for s in segments] == [(0, cut), (cut + 1, binned.n_bins[y] - 1)]
        assert [s[4] for s in segments] == pytest.approx([0.8 - base, 0.5 - base])

        (left_side, right_side) = bounds_for_split(engine, tree, left, y, cut)
        assert left_side == (-INF, pytest.approx(0.8 - base))
        assert right_side == (-INF, pytest.approx(0.5 - base))

    def test_four_cluster_matches_recompute(self):
        grower = figure_example_growers(n_splits=3)[ConstraintMode.SLOW]
        tree, engine = grower.tree, grower.engine
        scratch = recompute_all_constraints(tree, engine.directions)
        for leaf in tree.leaves:
            region = tree.nodes[leaf].region
            assert engine.constraints[leaf].same_bounds(scratch[leaf], region)
            assert engine.canonical(leaf) == scratch[leaf].feature_segments(region)

    @pytest.mark.parametrize("seed", range(500))
    def test_incremental_equals_recompute(self, seed):
        binned = _make_monotone_data(seed)
        grower = _grower(binned, ConstraintMode.SLOW, num_leaves=4 + seed % 29)
        engine, tree = grower.engine, grower.tree
        while grower.split_next() is not None:
            scratch = recompute_all_constraints(tree, engine.directions)
            for leaf in tree.leaves:
                assert engine.constraints[leaf].same_bounds(scratch[leaf], tree.nodes[leaf].region)


# ────────────────────── Cross-engine properties ──────────────────────

class TestConservativeness:

    @pytest.mark.parametrize("seed", range(100))
    def test_basic_within_fast_within_slow(self, seed):
        binned = _make_monotone_data(1000 + seed)
        source = _grower(binned, ConstraintMode.BASIC).grow()

        basic, fast, slow = BasicEngine(binned.directions), FastEngine(binned.directions), SlowEngine(binned.directions)
        _replay(source, basic)
        _replay(source, fast)
        tree = _replay(source, slow)
        for leaf in tree.leaves:
            lo_b, hi_b = basic.leaf_bounds(leaf)
            lo_f, hi_f = fast.leaf_bounds(leaf)
            assert lo_f <= lo_b and hi_b <= hi_f
            assert lo_f <= hi_f
            for point in _region_points(tree.nodes[leaf].region):
                lo_s, hi_s = slow.point_bounds(leaf, np.asarray(point))
                assert lo_s <= lo_f and hi_f <= hi_s
                assert lo_s <= hi_s
            assert lo_b <= tree.nodes[leaf].value <= hi_b


class TestGlobalMonotonicity:

    @pytest.mark.parametrize("mode", CONSTRAINED)
    @pytest.mark.parametrize("seed", range(50))
    def test_single_tree(self, mode, seed):
        binned = _make_monotone_data(2000 + seed)
        tree = _grower(binned, mode, num_leaves=16).grow()
        _assert_monotone(lambda grid: predict_binned(tree, grid), list(binned.n_bins), binned.directions)

    @pytest.mark.parametrize("mode", CONSTRAINED)
    @pytest.mark.parametrize("objective", [ObjectiveKind.L2, ObjectiveKind.BINARY])
    def test_ensemble(self, mode, objective):
        for seed in range(50):
            binned = _make_monotone_data(3000 + seed)
            if objective is ObjectiveKind.BINARY:
                binned = BinnedDataset(
                    binned.feature_names, binned.codes, binned.boundaries,
                    (binned.labels > np.median(binned.labels)).astype(float), binned.directions,
                )
            config = BoosterConfig(
                objective=objective, iterations=6, num_leaves=8, min_data_in_leaf=5,
                monotone_method=mode, learning_rate=0.3,
            )
            model, _ = train(binned, config, metrics=())
            _assert_monotone(model.predict_margin_codes, list(binned.n_bins), binned.directions)

    def test_unconstrained_can_violate(self):
        violations = 0
        for seed in range(10):
            binned = _make_monotone_data(400 + seed)
            tree = _grower(binned, ConstraintMode.NONE, num_leaves=16).grow()
            try:
                _assert_monotone(lambda grid: predict_binned(tree, grid), list(binned.n_bins), binned.directions)
            except AssertionError:
                violations += 1
        assert violations > 0
