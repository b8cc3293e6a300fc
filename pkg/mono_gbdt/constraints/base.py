"""
mono_gbdt/constraints/base.py — Shared types for the constraint engines, the engine protocol,
the single-interval engine base and the upward walk over opposite branches.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Protocol, Union

import numpy as np

from mono_gbdt.config import ConstraintMode
from mono_gbdt.errors import InfeasibleConstraintError
from mono_gbdt.tree import SplitCandidate, Tree

INF = math.inf
Bound = Union[float, np.ndarray]


@dataclass
class SplitBounds:
    """(min, max) per side of every candidate split; scalars or (n_features, max_bins) arrays."""
    left_min: Bound = -INF
    left_max: Bound = INF
    right_min: Bound = -INF
    right_max: Bound = INF

    def at(self, feature: int, threshold: int) -> tuple[tuple[float, float], tuple[float, float]]:
        def pick(value: Bound) -> float:
            return float(value[feature, threshold]) if np.ndim(value) else float(value)
        return (
            (pick(self.left_min), pick(self.left_max)),
            (pick(self.right_min), pick(self.right_max)),
        )


@dataclass
class ConstraintUpdateReport:
    changed: set[int] = field(default_factory=set)
    recomputed: bool = False


class ConstraintEngine(Protocol):
    mode: ConstraintMode
    directions: np.ndarray
    n_recomputations: int

    def reset(self, tree: Tree) -> None: ...

    def leaf_bounds(self, leaf_id: int) -> tuple[float, float]: ...

    def split_bounds(self, tree: Tree, leaf_id: int) -> SplitBounds: ...

    def point_bounds(self, leaf_id: int, point: np.ndarray) -> tuple[float, float]: ...

    def on_split(self, tree: Tree, node_id: int, candidate: SplitCandidate) -> ConstraintUpdateReport: ...

    def canonical(self, leaf_id: int) -> tuple: ...


def bounds_for_split(
    engine: ConstraintEngine, tree: Tree, leaf_id: int, feature: int, threshold: int
) -> tuple[tuple[float, float], tuple[float, float]]:
    """((left min, left max), (right min, right max)) for one split of one leaf."""
    return engine.split_bounds(tree, leaf_id).at(feature, threshold)


@dataclass
class OppositeHit:
    """A leaf across a monotone ancestor that overlaps some of the new children."""
    target: int
    feature: int
    gets_min: bool
    sources: list[int]


def opposite_leaves(tree: Tree, node_id: int, directions: np.ndarray) -> Iterator[OppositeHit]:
    """Walk from a freshly split node to the root; below every monotone ancestor, descend the
    branch not holding the split and yield the leaves whose region meets a new child's region
    on every feature but the ancestor's."""
    node = tree.nodes[node_id]
    children = [node.left, node.right]
    regions = [tree.nodes[c].region for c in children]
    child, parent = node_id, node.parent
    while parent is not None:
        ancestor = tree.nodes[parent]
        s = int(directions[ancestor.feature])
        if s != 0:
            on_left = ancestor.left == child
            opposite = ancestor.right if on_left else ancestor.left
            # new children sit below the opposite side when they are left of an increasing split
            gets_min = on_left == (s > 0)
            stack = [opposite]
            while stack:
                current = tree.nodes[stack.pop()]
                sources = [
                    c for c, region in zip(children, regions)
                    if current.region.overlaps(region, skip=ancestor.feature)
                ]
                if not sources:
                    continue
                if current.is_leaf:
                    yield OppositeHit(current.id, ancestor.feature, gets_min, sources)
                else:
                    stack.extend([current.right, current.left])
        child, parent = parent, ancestor.parent


class IntervalEngine:
    """Engine keeping one (min, max) per leaf; inert unless a subclass tightens it."""
    mode = ConstraintMode.NONE

    def __init__(self, directions):
        self.declared = np.asarray(directions, dtype=np.int8)
        self.directions = self.declared
        self.lower: dict[int, float] = {}
        self.upper: dict[int, float] = {}
        self.n_bins = np.zeros(0, dtype=np.int64)
        self.n_recomputations = 0

    def reset(self, tree: Tree) -> None:
        self.lower = {0: -INF}
        self.upper = {0: INF}
        self.n_bins = tree.n_bins

    def leaf_bounds(self, leaf_id: int) -> tuple[float, float]:
        return self.lower[leaf_id], self.upper[leaf_id]

    def split_bounds(self, tree: Tree, leaf_id: int) -> SplitBounds:
        lo, hi = self.leaf_bounds(leaf_id)
        return SplitBounds(lo, hi, lo, hi)

    def point_bounds(self, leaf_id: int, point: np.ndarray) -> tuple[float, float]:
        return self.leaf_bounds(leaf_id)

    def on_split(self, tree: Tree, node_id: int, candidate: SplitCandidate) -> ConstraintUpdateReport:
        node = tree.nodes[node_id]
        lo, hi = self.lower.pop(node_id), self.upper.pop(node_id)
        for child in (node.left, node.right):
            self.lower[child], self.upper[child] = lo, hi
        changed = self._tighten(tree, node_id, candidate)
        for leaf in changed | {node.left, node.right}:
            if self.lower[leaf] > self.upper[leaf]:
                raise InfeasibleConstraintError(leaf, self.lower[leaf], self.upper[leaf])
        return ConstraintUpdateReport(changed=changed)

    def _tighten(self, tree: Tree, node_id: int, candidate: SplitCandidate) -> set[int]:
        return set()

    def _cap(self, leaf: int, value: float) -> bool:
        if value < self.upper[leaf]:
            self.upper[leaf] = value
            return True
        return False

    def _floor(self, leaf: int, value: float) -> bool:
        if value > self.lower[leaf]:
            self.lower[leaf] = value
            return True
        return False

    def canonical(self, leaf_id: int) -> tuple:
        lo, hi = self.leaf_bounds(leaf_id)
        if lo == -INF and hi == INF:
            return ()
        return tuple((f, None, None, lo, hi) for f in range(len(self.n_bins)))
