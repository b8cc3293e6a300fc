"""
mono_gbdt/tree.py — Histograms, split finding, leaf-wise tree growth, prediction and export.

A tree is grown best-first: every leaf holds its best SplitCandidate in a heap keyed by
penalized gain, and the constraint engine is consulted both when candidates are scored
(bounds per side) and after every executed split (bound propagation).
"""
from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field
from timeit import default_timer as timer
from typing import TYPE_CHECKING, Optional, Sequence

import graphviz
import numpy as np

from mono_gbdt.config import TreeConfig
from mono_gbdt.errors import InfeasibleConstraintError, ModelFormatError, ParameterError

if TYPE_CHECKING:
    from mono_gbdt.constraints.base import ConstraintEngine, SplitBounds
    from mono_gbdt.constraints.penalty import PenaltyParams
    from mono_gbdt.dataset import BinnedDataset
    from mono_gbdt.objective import GradHess

logger = logging.getLogger(__name__)


# ── Histograms ──


@dataclass
class Histogram:
    """Per-feature, per-bin sums of gradient, hessian and row count.

    Arrays are (n_features, max_bins); bins past a feature's own bin count stay zero.
    """
    grad: np.ndarray
    hess: np.ndarray
    count: np.ndarray
    n_bins: np.ndarray

    def __sub__(self, other: "Histogram") -> "Histogram":
        return Histogram(
            self.grad - other.grad, self.hess - other.hess, self.count - other.count, self.n_bins
        )


def build_histograms(dataset: "BinnedDataset", rows: np.ndarray, grad_hess: "GradHess") -> Histogram:
    """One bincount per statistic over the flattened (row, feature) bin codes."""
    n_features, width = dataset.n_features, dataset.max_bins
    size = n_features * width
    flat = dataset.flat_codes[rows].ravel()
    grad = np.bincount(flat, weights=np.repeat(grad_hess.gradient[rows], n_features), minlength=size)
    hess = np.bincount(flat, weights=np.repeat(grad_hess.hessian[rows], n_features), minlength=size)
    count = np.bincount(flat, minlength=size)
    shape = (n_features, width)
    return Histogram(grad.reshape(shape), hess.reshape(shape), count.reshape(shape), dataset.n_bins)


# ── Leaf values and gains ──


def constrained_leaf_output(
    G: float, H: float, reg_lambda: float, min_bound: float, max_bound: float, leaf_id: int = -1
) -> float:
    """Minimizer of G·w + ½(H+λ)w² over [min_bound, max_bound]."""
    if min_bound > max_bound:
        raise InfeasibleConstraintError(leaf_id, min_bound, max_bound)
    denom = H + reg_lambda
    w = -G / denom if denom > 0 else 0.0
    return float(min(max(w, min_bound), max_bound))


def _clamped_outputs(G, H, reg_lambda, lower, upper) -> np.ndarray:
    denom = H + reg_lambda
    positive = denom > 0
    w = np.where(positive, -G / np.where(positive, denom, 1.0), 0.0)
    return np.clip(w, lower, upper)


def _score(G, H, w, reg_lambda):
    return G * w + 0.5 * (H + reg_lambda) * w * w


# ── Tree structure ──


@dataclass
class LeafRegion:
    """Inclusive bin interval per feature."""
    low: np.ndarray
    high: np.ndarray

    @classmethod
    def full(cls, n_bins: np.ndarray) -> "LeafRegion":
        n_bins = np.asarray(n_bins, dtype=np.int64)
        return cls(np.zeros_like(n_bins), np.maximum(n_bins - 1, 0))

    def split(self, feature: int, threshold: int) -> tuple["LeafRegion", "LeafRegion"]:
        left_high = self.high.copy()
        left_high[feature] = threshold
        right_low = self.low.copy()
        right_low[feature] = threshold + 1
        return LeafRegion(self.low.copy(), left_high), LeafRegion(right_low, self.high.copy())

    def overlaps(self, other: "LeafRegion", skip: Optional[int] = None) -> bool:
        """True when the boxes intersect on every feature except ``skip``."""
        hit = (self.low <= other.high) & (other.low <= self.high)
        if skip is not None:
            hit[skip] = True
        return bool(hit.all())


@dataclass
class SplitCandidate:
    leaf: int
    feature: int
    threshold: int
    left_output: float
    right_output: float
    gain: float
    penalized_gain: float
    left_stats: tuple[float, float, int]
    right_stats: tuple[float, float, int]
    direction: int = 0


@dataclass
class TreeNode:
    id: int
    depth: int
    region: LeafRegion
    value: float = 0.0
    sum_grad: float = 0.0
    sum_hess: float = 0.0
    count: int = 0
    parent: Optional[int] = None
    is_leaf: bool = True
    feature: Optional[int] = None
    threshold: Optional[int] = None
    threshold_value: Optional[float] = None
    left: Optional[int] = None
    right: Optional[int] = None
    split_order: Optional[int] = None
    monotone_direction: int = 0
    gain: float = 0.0
    penalized_gain: float = 0.0

    @property
    def is_monotone(self) -> bool:
        return self.monotone_direction != 0


@dataclass
class Tree:
    """Binary tree whose node ids are list indices; node 0 is the root."""
    nodes: list[TreeNode]
    n_bins: np.ndarray
    feature_names: tuple[str, ...] = ()
    boundaries: Optional[tuple[np.ndarray, ...]] = None
    n_splits: int = 0

    @classmethod
    def single_leaf(cls, n_bins, feature_names=(), boundaries=None) -> "Tree":
        n_bins = np.asarray(n_bins, dtype=np.int64)
        root = TreeNode(id=0, depth=0, region=LeafRegion.full(n_bins))
        return cls([root], n_bins, tuple(feature_names), boundaries)

    @property
    def n_features(self) -> int:
        return len(self.n_bins)

    @property
    def max_bins(self) -> int:
        return int(self.n_bins.max()) if self.n_features else 1

    @property
    def leaves(self) -> list[int]:
        return [n.id for n in self.nodes if n.is_leaf]

    @property
    def n_leaves(self) -> int:
        return sum(1 for n in self.nodes if n.is_leaf)

    @property
    def max_depth(self) -> int:
        return max(n.depth for n in self.nodes)

    def split(self, leaf_id: int, candidate: SplitCandidate) -> tuple[int, int]:
        """Turn ``leaf_id`` into an internal node with two fresh leaf children."""
        node = self.nodes[leaf_id]
        if not node.is_leaf:
            raise ParameterError(f"Node {leaf_id} is already split")
        left_region, right_region = node.region.split(candidate.feature, candidate.threshold)
        ids = []
        for region, output, (G, H, count) in (
            (left_region, candidate.left_output, candidate.left_stats),
            (right_region, candidate.right_output, candidate.right_stats),
        ):
            child = TreeNode(
                id=len(self.nodes), depth=node.depth + 1, region=region, value=output,
                sum_grad=G, sum_hess=H, count=count, parent=leaf_id,
            )
            self.nodes.append(child)
            ids.append(child.id)

        node.is_leaf = False
        node.feature = candidate.feature
        node.threshold = candidate.threshold
        if self.boundaries is not None:
            node.threshold_value = float(self.boundaries[candidate.feature][candidate.threshold])
        node.left, node.right = ids
        node.split_order = self.n_splits
        node.monotone_direction = candidate.direction
        node.gain = candidate.gain
        node.penalized_gain = candidate.penalized_gain
        self.n_splits += 1
        return ids[0], ids[1]

    def leaf_for(self, codes_row: np.ndarray) -> int:
        node = self.nodes[0]
        while not node.is_leaf:
            node = self.nodes[node.left if codes_row[node.feature] <= node.threshold else node.right]
        return node.id


def predict_tree(tree: Tree, codes_row: Sequence[int] | np.ndarray) -> float:
    """Output of the leaf a single binned row lands in."""
    return tree.nodes[tree.leaf_for(np.asarray(codes_row))].value


def predict_binned(tree: Tree, codes: np.ndarray) -> np.ndarray:
    """Leaf outputs for every row of a (n_rows, n_features) code matrix."""
    codes = np.asarray(codes)
    feature = np.array([n.feature if n.feature is not None else 0 for n in tree.nodes], dtype=np.int64)
    threshold = np.array([n.threshold if n.threshold is not None else 0 for n in tree.nodes], dtype=np.int64)
    left = np.array([n.left if n.left is not None else -1 for n in tree.nodes], dtype=np.int64)
    right = np.array([n.right if n.right is not None else -1 for n in tree.nodes], dtype=np.int64)
    values = np.array([n.value for n in tree.nodes])
    is_leaf = np.array([n.is_leaf for n in tree.nodes])

    at = np.zeros(codes.shape[0], dtype=np.int64)
    active = np.flatnonzero(~is_leaf[at])
    while active.size:
        here = at[active]
        go_left = codes[active, feature[here]] <= threshold[here]
        at[active] = np.where(go_left, left[here], right[here])
        active = active[~is_leaf[at[active]]]
    return values[at]


# ── Split finding ──


@dataclass
class SplitTable:
    """Every (feature, threshold) evaluation of one leaf; arrays are (n_features, max_bins)."""
    gain: np.ndarray
    penalized_gain: np.ndarray
    valid: np.ndarray
    ordered: np.ndarray
    left_output: np.ndarray
    right_output: np.ndarray
    left_stats: tuple[np.ndarray, np.ndarray, np.ndarray]
    right_stats: tuple[np.ndarray, np.ndarray, np.ndarray]
    directions: np.ndarray

    def candidate(self, leaf: int, feature: int, threshold: int) -> SplitCandidate:
        at = (feature, threshold)
        return SplitCandidate(
            leaf=leaf,
            feature=int(feature),
            threshold=int(threshold),
            left_output=float(self.left_output[at]),
            right_output=float(self.right_output[at]),
            gain=float(self.gain[at]),
            penalized_gain=float(self.penalized_gain[at]),
            left_stats=(float(self.left_stats[0][at]), float(self.left_stats[1][at]), int(self.left_stats[2][at])),
            right_stats=(float(self.right_stats[0][at]), float(self.right_stats[1][at]), int(self.right_stats[2][at])),
            direction=int(self.directions[feature]),
        )


def evaluate_splits(
    leaf: TreeNode,
    hist: Histogram,
    bounds: "SplitBounds",
    directions: np.ndarray,
    penalty_cfg: "PenaltyParams",
    reg_lambda: float,
    min_data_in_leaf: int,
    min_hessian: float,
) -> SplitTable:
    """Score all thresholds of all features at clamped child outputs."""
    GL = np.cumsum(hist.grad, axis=1)
    HL = np.cumsum(hist.hess, axis=1)
    CL = np.cumsum(hist.count, axis=1)
    G, H, C = leaf.sum_grad, leaf.sum_hess, leaf.count
    GR, HR, CR = G - GL, H - HL, C - CL

    n_features, width = hist.grad.shape
    in_range = np.arange(width)[None, :] < (np.asarray(hist.n_bins)[:, None] - 1)
    min_rows = max(min_data_in_leaf, 1)
    valid = in_range & (CL >= min_rows) & (CR >= min_rows) & (HL >= min_hessian) & (HR >= min_hessian)

    left_output = _clamped_outputs(GL, HL, reg_lambda, bounds.left_min, bounds.left_max)
    right_output = _clamped_outputs(GR, HR, reg_lambda, bounds.right_min, bounds.right_max)
    directions = np.asarray(directions, dtype=np.int8)
    increasing = (directions > 0)[:, None]
    decreasing = (directions < 0)[:, None]
    ordered = ~((increasing & (left_output > right_output)) | (decreasing & (left_output < right_output)))

    gain = (
        _score(G, H, leaf.value, reg_lambda)
        - _score(GL, HL, left_output, reg_lambda)
        - _score(GR, HR, right_output, reg_lambda)
    )
    factor = np.where(directions != 0, penalty_cfg.factor(leaf.depth), 1.0)
    penalized = gain * factor[:, None]
    return SplitTable(
        gain=gain,
        penalized_gain=penalized,
        valid=valid,
        ordered=ordered,
        left_output=left_output,
        right_output=right_output,
        left_stats=(GL, HL, CL),
        right_stats=(GR, HR, CR),
        directions=directions,
    )


def find_best_split(
    leaf: TreeNode,
    hist: Histogram,
    bounds: "SplitBounds",
    directions: np.ndarray,
    penalty_cfg: "PenaltyParams",
    reg_lambda: float,
    min_data_in_leaf: int,
    min_hessian: float,
) -> Optional[SplitCandidate]:
    """Best (feature, threshold) by penalized gain; ties go to the lowest feature, then bin."""
    if hist.grad.size == 0:
        return None
    table = evaluate_splits(
        leaf, hist, bounds, directions, penalty_cfg, reg_lambda, min_data_in_leaf, min_hessian
    )
    scores = np.where(table.valid & table.ordered, table.penalized_gain, -np.inf)
    best = int(np.argmax(scores))
    feature, threshold = divmod(best, scores.shape[1])
    if not scores[feature, threshold] > 0:
        return None
    return table.candidate(leaf.id, feature, threshold)


# ── Growth ──


class TreeGrower:
    """Best-first grower over one BinnedDataset and one set of gradients."""

    def __init__(
        self,
        dataset: "BinnedDataset",
        grad_hess: "GradHess",
        config: TreeConfig,
        engine: "ConstraintEngine",
        penalty_cfg: "PenaltyParams",
        rows: Optional[np.ndarray] = None,
    ):
        config.validate()
        self.dataset = dataset
        self.grad_hess = grad_hess
        self.config = config
        self.engine = engine
        self.penalty_cfg = penalty_cfg
        self.tree = Tree.single_leaf(dataset.n_bins, dataset.feature_names, dataset.boundaries)
        self.timings = {"histograms": 0.0, "split_finding": 0.0, "constraints": 0.0}
        self._heap: list[tuple[float, int, int]] = []
        self._version: dict[int, int] = {}
        self._candidates: dict[int, SplitCandidate] = {}

        rows = np.arange(dataset.n_rows) if rows is None else np.asarray(rows, dtype=np.int64)
        engine.reset(self.tree)
        start = timer()
        hist = build_histograms(dataset, rows, grad_hess)
        self.timings["histograms"] += timer() - start

        root = self.tree.nodes[0]
        root.sum_grad = float(grad_hess.gradient[rows].sum())
        root.sum_hess = float(grad_hess.hessian[rows].sum())
        root.count = int(rows.size)
        lower, upper = engine.leaf_bounds(0)
        root.value = constrained_leaf_output(
            root.sum_grad, root.sum_hess, config.reg_lambda, lower, upper, leaf_id=0
        )
        self.leaf_rows: dict[int, np.ndarray] = {0: rows}
        self._hist: dict[int, Histogram] = {0: hist}
        self._evaluate(0)

    # -- candidates --

    def _evaluate(self, leaf_id: int) -> None:
        self._version[leaf_id] = self._version.get(leaf_id, 0) + 1
        self._candidates.pop(leaf_id, None)
        node = self.tree.nodes[leaf_id]
        if node.depth >= self.config.max_depth:
            return
        start = timer()
        candidate = find_best_split(
            node,
            self._hist[leaf_id],
            self.engine.split_bounds(self.tree, leaf_id),
            self.engine.directions,
            self.penalty_cfg,
            self.config.reg_lambda,
            self.config.min_data_in_leaf,
            self.config.min_hessian,
        )
        self.timings["split_finding"] += timer() - start
        if candidate is not None:
            self._candidates[leaf_id] = candidate
            heapq.heappush(self._heap, (-candidate.penalized_gain, leaf_id, self._version[leaf_id]))

    # -- splitting --

    def split_next(self) -> Optional[SplitCandidate]:
        """Execute the best queued split; None once growth has stopped."""
        if self.tree.n_leaves >= self.config.num_leaves:
            return None
        while self._heap:
            _, leaf_id, version = heapq.heappop(self._heap)
            if version != self._version.get(leaf_id) or not self.tree.nodes[leaf_id].is_leaf:
                continue
            candidate = self._candidates.pop(leaf_id)
            self._apply(candidate)
            return candidate
        return None

    def force_split(self, leaf_id: int, feature: int, threshold: int) -> SplitCandidate:
        """Execute one given split under the current bounds, regardless of its gain."""
        node = self.tree.nodes[leaf_id]
        if not node.is_leaf:
            raise ParameterError(f"Node {leaf_id} is not a leaf")
        if not 0 <= threshold < self.tree.n_bins[feature] - 1:
            raise ParameterError(f"Threshold bin {threshold} is out of range for feature {feature}")
        table = evaluate_splits(
            node,
            self._hist[leaf_id],
            self.engine.split_bounds(self.tree, leaf_id),
            self.engine.directions,
            self.penalty_cfg,
            self.config.reg_lambda,
            self.config.min_data_in_leaf,
            self.config.min_hessian,
        )
        candidate = table.candidate(leaf_id, feature, threshold)
        if not table.ordered[feature, threshold]:
            raise InfeasibleConstraintError(leaf_id, candidate.left_output, candidate.right_output)
        if not table.valid[feature, threshold]:
            raise ParameterError(
                f"Forced split ({feature}, {threshold}) on leaf {leaf_id} leaves a side too small"
            )
        self._version[leaf_id] = self._version.get(leaf_id, 0) + 1
        self._candidates.pop(leaf_id, None)
        self._apply(candidate)
        return candidate

    def _apply(self, candidate: SplitCandidate) -> None:
        leaf_id = candidate.leaf
        left_id, right_id = self.tree.split(leaf_id, candidate)

        start = timer()
        rows = self.leaf_rows.pop(leaf_id)
        goes_left = self.dataset.codes[rows, candidate.feature] <= candidate.threshold
        left_rows, right_rows = rows[goes_left], rows[~goes_left]
        parent_hist = self._hist.pop(leaf_id)
        if left_rows.size <= right_rows.size:
            small, large, small_rows = left_id, right_id, left_rows
        else:
            small, large, small_rows = right_id, left_id, right_rows
        self._hist[small] = build_histograms(self.dataset, small_rows, self.grad_hess)
        self._hist[large] = parent_hist - self._hist[small]
        self.leaf_rows[left_id], self.leaf_rows[right_id] = left_rows, right_rows
        self.timings["histograms"] += timer() - start

        start = timer()
        report = self.engine.on_split(self.tree, leaf_id, candidate)
        self.timings["constraints"] += timer() - start
        logger.debug(
            "split leaf %d on feature %d at bin %d: gain=%.6g outputs=(%.6g, %.6g) changed=%d%s",
            leaf_id, candidate.feature, candidate.threshold, candidate.gain,
            candidate.left_output, candidate.right_output, len(report.changed),
            " (recomputed)" if report.recomputed else "",
        )

        for leaf in sorted({left_id, right_id} | set(report.changed)):
            if self.tree.nodes[leaf].is_leaf:
                self._evaluate(leaf)

    def grow(self) -> Tree:
        while self.split_next() is not None:
            pass
        logger.debug(
            "tree grown: %d leaves, depth %d, timings %s",
            self.tree.n_leaves, self.tree.max_depth,
            {k: round(v, 6) for k, v in self.timings.items()},
        )
        return self.tree


def grow_tree(
    dataset: "BinnedDataset",
    rows: Optional[np.ndarray],
    grad_hess: "GradHess",
    config: TreeConfig,
    engine: "ConstraintEngine",
    penalty_cfg: Optional["PenaltyParams"] = None,
) -> Tree:
    if penalty_cfg is None:
        from mono_gbdt.constraints.penalty import PenaltyParams
        penalty_cfg = PenaltyParams()
    return TreeGrower(dataset, grad_hess, config, engine, penalty_cfg, rows=rows).grow()


# ── Serialization and export ──


def tree_to_dict(tree: Tree) -> dict:
    nodes = []
    for n in tree.nodes:
        entry = {
            "id": n.id,
            "kind": "leaf" if n.is_leaf else "internal",
            "depth": n.depth,
            "value": n.value,
            "count": n.count,
            "sum_grad": n.sum_grad,
            "sum_hess": n.sum_hess,
            "parent": n.parent,
            "region_low": [int(v) for v in n.region.low],
            "region_high": [int(v) for v in n.region.high],
        }
        if not n.is_leaf:
            entry.update({
                "feature": n.feature,
                "threshold": n.threshold,
                "threshold_value": n.threshold_value,
                "left": n.left,
                "right": n.right,
                "split_order": n.split_order,
                "monotone_direction": n.monotone_direction,
                "gain": n.gain,
                "penalized_gain": n.penalized_gain,
            })
        nodes.append(entry)
    return {"n_bins": [int(b) for b in tree.n_bins], "n_splits": tree.n_splits, "nodes": nodes}


def tree_from_dict(data: dict, feature_names=(), boundaries=None) -> Tree:
    try:
        n_bins = np.asarray(data["n_bins"], dtype=np.int64)
        nodes = []
        for i, entry in enumerate(data["nodes"]):
            if entry["id"] != i:
                raise ModelFormatError(f"Tree node {i} carries id {entry['id']}")
            node = TreeNode(
                id=i,
                depth=int(entry["depth"]),
                region=LeafRegion(
                    np.asarray(entry["region_low"], dtype=np.int64),
                    np.asarray(entry["region_high"], dtype=np.int64),
                ),
                value=float(entry["value"]),
                sum_grad=float(entry["sum_grad"]),
                sum_hess=float(entry["sum_hess"]),
                count=int(entry["count"]),
                parent=entry["parent"],
                is_leaf=entry["kind"] == "leaf",
            )
            if not node.is_leaf:
                node.feature = int(entry["feature"])
                node.threshold = int(entry["threshold"])
                node.threshold_value = entry.get("threshold_value")
                node.left = int(entry["left"])
                node.right = int(entry["right"])
                node.split_order = entry.get("split_order")
                node.monotone_direction = int(entry.get("monotone_direction", 0))
                node.gain = float(entry.get("gain", 0.0))
                node.penalized_gain = float(entry.get("penalized_gain", 0.0))
            nodes.append(node)
    except (KeyError, TypeError, ValueError) as e:
        raise ModelFormatError(f"Malformed tree document: {e}") from e
    for node in nodes:
        if not node.is_leaf and not (node.left < len(nodes) and node.right < len(nodes)):
            raise ModelFormatError(f"Tree node {node.id} points past the node list")
    return Tree(nodes, n_bins, tuple(feature_names), boundaries, int(data.get("n_splits", 0)))


MONOTONE_FILL = {1: "palegreen", -1: "lightpink"}


def export_dot(tree: Tree, name: str = "tree") -> str:
    """DOT source: split order and gain on internal nodes, monotone splits filled."""
    dot = graphviz.Digraph(name)
    dot.attr(rankdir="TB")
    dot.attr("node", shape="box", style="rounded", fontname="helvetica")
    for n in tree.nodes:
        if n.is_leaf:
            dot.node(f"n{n.id}", f"leaf {n.id}\\nvalue {n.value:.6g}\\nrows {n.count}", shape="ellipse")
            continue
        feature = tree.feature_names[n.feature] if tree.feature_names else f"f{n.feature}"
        cut = f"{n.threshold_value:.6g}" if n.threshold_value is not None else f"bin {n.threshold}"
        label = f"#{n.split_order}\\n{feature} <= {cut}\\ngain {n.gain:.6g}"
        if n.is_monotone:
            dot.node(f"n{n.id}", label, style="rounded,filled", fillcolor=MONOTONE_FILL[n.monotone_direction])
        else:
            dot.node(f"n{n.id}", label)
        dot.edge(f"n{n.id}", f"n{n.left}", label="yes")
        dot.edge(f"n{n.id}", f"n{n.right}", label="no")
    return dot.source
