"""
mono_gbdt/constraints/slow.py — Piecewise engine.

Each leaf stores a list of boxes inside its region, each carrying a one-sided bound taken from
the output of a comparable leaf. The effective bound at a point is the tightest bound over the
boxes containing it, so a split only pays for the constraints on the side it lands in.
Whenever a split would loosen a previously stored bound, every constraint is rebuilt from
scratch by comparing all leaf pairs.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from mono_gbdt.config import ConstraintMode
from mono_gbdt.constraints.base import ConstraintUpdateReport, SplitBounds, opposite_leaves
from mono_gbdt.errors import InfeasibleConstraintError
from mono_gbdt.tree import LeafRegion, SplitCandidate, Tree

logger = logging.getLogger(__name__)

INF = math.inf


@dataclass(frozen=True)
class PiecewiseConstraint:
    """Boxes (inclusive bin intervals per feature) with a min and a max bound each."""
    lows: np.ndarray    # (n_boxes, n_features)
    highs: np.ndarray
    mins: np.ndarray    # (n_boxes,)
    maxs: np.ndarray

    @classmethod
    def unbounded(cls, n_features: int) -> "PiecewiseConstraint":
        empty = np.zeros((0, n_features), dtype=np.int64)
        return cls(empty, empty.copy(), np.zeros(0), np.zeros(0))

    @classmethod
    def from_boxes(cls, n_features: int, boxes: list[tuple[np.ndarray, np.ndarray, float, float]]) -> "PiecewiseConstraint":
        if not boxes:
            return cls.unbounded(n_features)
        lows, highs, mins, maxs = zip(*boxes)
        return cls(
            np.vstack(lows).astype(np.int64), np.vstack(highs).astype(np.int64),
            np.asarray(mins, dtype=float), np.asarray(maxs, dtype=float),
        )

    @property
    def n_boxes(self) -> int:
        return self.lows.shape[0]

    def restrict(self, region: LeafRegion) -> "PiecewiseConstraint":
        """Clip every box to ``region`` and drop those left empty."""
        lows = np.maximum(self.lows, region.low)
        highs = np.minimum(self.highs, region.high)
        keep = np.all(lows <= highs, axis=1)
        return PiecewiseConstraint(lows[keep], highs[keep], self.mins[keep], self.maxs[keep])

    def add(self, low: np.ndarray, high: np.ndarray, lower: float = -INF, upper: float = INF) -> "PiecewiseConstraint":
        return PiecewiseConstraint(
            np.vstack([self.lows, np.asarray(low, dtype=np.int64)[None, :]]),
            np.vstack([self.highs, np.asarray(high, dtype=np.int64)[None, :]]),
            np.append(self.mins, lower),
            np.append(self.maxs, upper),
        )

    def aggregate(self) -> tuple[float, float]:
        """Bound a single output over the whole region must respect."""
        return float(self.mins.max(initial=-INF)), float(self.maxs.min(initial=INF))

    def bound_at(self, point: np.ndarray) -> tuple[float, float]:
        inside = np.all((self.lows <= point) & (point <= self.highs), axis=1)
        return float(self.mins[inside].max(initial=-INF)), float(self.maxs[inside].min(initial=INF))

    def side_bounds(self, width: int) -> SplitBounds:
        """Aggregated bounds of the left (bin <= t) and right (bin > t) side for every (f, t).

        Boxes must already lie inside the leaf region.
        """
        n_boxes, n_features = self.lows.shape
        if n_boxes == 0:
            return SplitBounds()
        feature = np.tile(np.arange(n_features), n_boxes)
        box_min = np.repeat(self.mins, n_features)
        box_max = np.repeat(self.maxs, n_features)

        # a box reaches the left side of threshold t when its low bin is <= t
        at = (feature, self.lows.ravel())
        left_min = np.full((n_features, width), -INF)
        left_max = np.full((n_features, width), INF)
        np.maximum.at(left_min, at, box_min)
        np.minimum.at(left_max, at, box_max)
        left_min = np.maximum.accumulate(left_min, axis=1)
        left_max = np.minimum.accumulate(left_max, axis=1)

        # and the right side when its high bin is > t
        last = self.highs.ravel() - 1
        reach = last >= 0
        at = (feature[reach], last[reach])
        right_min = np.full((n_features, width), -INF)
        right_max = np.full((n_features, width), INF)
        np.maximum.at(right_min, at, box_min[reach])
        np.minimum.at(right_max, at, box_max[reach])
        right_min = np.maximum.accumulate(right_min[:, ::-1], axis=1)[:, ::-1]
        right_max = np.minimum.accumulate(right_max[:, ::-1], axis=1)[:, ::-1]
        return SplitBounds(left_min, left_max, right_min, right_max)

    def feature_segments(self, region: LeafRegion) -> tuple:
        """Per feature, merged runs of bins sharing the same slice bound.

        The slice bound of bin b on feature f is the tightest bound over boxes meeting the
        slice x_f = b of the region. Unbounded runs are omitted.
        """
        segments = []
        for f in range(len(region.low)):
            bins = np.arange(region.low[f], region.high[f] + 1)
            if self.n_boxes:
                meets = (self.lows[:, f][:, None] <= bins) & (bins <= self.highs[:, f][:, None])
                slice_min = np.where(meets, self.mins[:, None], -INF).max(axis=0)
                slice_max = np.where(meets, self.maxs[:, None], INF).min(axis=0)
            else:
                slice_min = np.full(bins.size, -INF)
                slice_max = np.full(bins.size, INF)
            start = 0
            for i in range(1, bins.size + 1):
                if i < bins.size and slice_min[i] == slice_min[start] and slice_max[i] == slice_max[start]:
                    continue
                if slice_min[start] != -INF or slice_max[start] != INF:
                    segments.append((f, int(bins[start]), int(bins[i - 1]),
                                     float(slice_min[start]), float(slice_max[start])))
                start = i
        return tuple(segments)

    def same_bounds(self, other: "PiecewiseConstraint", region: LeafRegion) -> bool:
        """Exact pointwise equality of effective bounds over ``region``."""
        axes = []
        for f in range(len(region.low)):
            cuts = {int(region.low[f])}
            for c in (self, other):
                cuts.update(int(v) for v in c.lows[:, f])
                cuts.update(int(v) + 1 for v in c.highs[:, f])
            axes.append(sorted(v for v in cuts if region.low[f] <= v <= region.high[f]))
        for point in itertools.product(*axes):
            point = np.asarray(point)
            if self.bound_at(point) != other.bound_at(point):
                return False
        return True


def recompute_all_constraints(tree: Tree, directions: np.ndarray) -> dict[int, PiecewiseConstraint]:
    """Constraints of every leaf rebuilt from all comparable leaf pairs.

    Leaves a and b are comparable on monotone feature f when a lies strictly below b on f and
    their regions meet on every other feature; each gets a box over its part facing the other.
    """
    directions = np.asarray(directions)
    leaves = tree.leaves
    n_features = tree.n_features
    boxes: dict[int, list] = {leaf: [] for leaf in leaves}
    if len(leaves) > 1 and directions.any():
        lows = np.stack([tree.nodes[leaf].region.low for leaf in leaves])
        highs = np.stack([tree.nodes[leaf].region.high for leaf in leaves])
        values = np.array([tree.nodes[leaf].value for leaf in leaves])
        meets = (lows[:, None, :] <= highs[None, :, :]) & (lows[None, :, :] <= highs[:, None, :])
        apart = (~meets).sum(axis=2)
        for f in np.flatnonzero(directions):
            s = int(directions[f])
            below = (highs[:, None, f] < lows[None, :, f]) & (apart == 1)
            for a, b in np.argwhere(below):
                common_low = np.maximum(lows[a], lows[b])
                common_high = np.minimum(highs[a], highs[b])
                low_a, high_a = common_low.copy(), common_high.copy()
                low_a[f], high_a[f] = lows[a, f], highs[a, f]
                low_b, high_b = common_low.copy(), common_high.copy()
                low_b[f], high_b[f] = lows[b, f], highs[b, f]
                if s > 0:
                    boxes[leaves[a]].append((low_a, high_a, -INF, values[b]))
                    boxes[leaves[b]].append((low_b, high_b, values[a], INF))
                else:
                    boxes[leaves[a]].append((low_a, high_a, values[b], INF))
                    boxes[leaves[b]].append((low_b, high_b, -INF, values[a]))
    return {leaf: PiecewiseConstraint.from_boxes(n_features, found) for leaf, found in boxes.items()}


class SlowEngine:
    mode = ConstraintMode.SLOW

    def __init__(self, directions):
        self.declared = np.asarray(directions, dtype=np.int8)
        self.directions = self.declared
        self.constraints: dict[int, PiecewiseConstraint] = {}
        self.n_recomputations = 0
        self._tree: Optional[Tree] = None

    def reset(self, tree: Tree) -> None:
        self._tree = tree
        self.constraints = {0: PiecewiseConstraint.unbounded(tree.n_features)}

    def leaf_bounds(self, leaf_id: int) -> tuple[float, float]:
        return self.constraints[leaf_id].aggregate()

    def split_bounds(self, tree: Tree, leaf_id: int) -> SplitBounds:
        return self.constraints[leaf_id].side_bounds(tree.max_bins)

    def point_bounds(self, leaf_id: int, point: np.ndarray) -> tuple[float, float]:
        return self.constraints[leaf_id].bound_at(np.asarray(point))

    def canonical(self, leaf_id: int) -> tuple:
        return self.constraints[leaf_id].feature_segments(self._tree.nodes[leaf_id].region)

    def recompute(self, tree: Tree) -> None:
        self.constraints = recompute_all_constraints(tree, self.directions)
        self.n_recomputations += 1
        logger.debug("slow constraints rebuilt for %d leaves", tree.n_leaves)

    def on_split(self, tree: Tree, node_id: int, candidate: SplitCandidate) -> ConstraintUpdateReport:
        node = tree.nodes[node_id]
        left, right = tree.nodes[node.left], tree.nodes[node.right]
        inherited = self.constraints.pop(node_id)
        self.constraints[left.id] = inherited.restrict(left.region)
        self.constraints[right.id] = inherited.restrict(right.region)

        s = int(self.directions[candidate.feature])
        if s > 0:
            self.constraints[left.id] = self.constraints[left.id].add(left.region.low, left.region.high, upper=right.value)
            self.constraints[right.id] = self.constraints[right.id].add(right.region.low, right.region.high, lower=left.value)
        elif s < 0:
            self.constraints[left.id] = self.constraints[left.id].add(left.region.low, left.region.high, lower=right.value)
            self.constraints[right.id] = self.constraints[right.id].add(right.region.low, right.region.high, upper=left.value)

        hits = list(opposite_leaves(tree, node_id, self.directions))
        loosened = False
        for hit in hits:
            outputs = [tree.nodes[c].value for c in hit.sources]
            if (hit.gets_min and min(outputs) < node.value) or (not hit.gets_min and max(outputs) > node.value):
                loosened = True
                break

        if loosened:
            self.recompute(tree)
        else:
            for hit in hits:
                target = tree.nodes[hit.target]
                updated = self.constraints[hit.target]
                for source in hit.sources:
                    region = tree.nodes[source].region
                    low = np.maximum(target.region.low, region.low)
                    high = np.minimum(target.region.high, region.high)
                    low[hit.feature], high[hit.feature] = target.region.low[hit.feature], target.region.high[hit.feature]
                    value = tree.nodes[source].value
                    updated = updated.add(low, high, lower=value) if hit.gets_min else updated.add(low, high, upper=value)
                self.constraints[hit.target] = updated

        for hit in hits:
            outputs = [tree.nodes[c].value for c in hit.sources]
            own = tree.nodes[hit.target].value
            if hit.gets_min and max(outputs) > own:
                raise InfeasibleConstraintError(hit.target, max(outputs), own)
            if not hit.gets_min and min(outputs) < own:
                raise InfeasibleConstraintError(hit.target, own, min(outputs))
        return ConstraintUpdateReport(changed={hit.target for hit in hits}, recomputed=loosened)
