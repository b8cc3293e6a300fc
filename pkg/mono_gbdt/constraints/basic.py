"""
mono_gbdt/constraints/basic.py — Unconstrained engine and the midpoint engine.
"""
from __future__ import annotations

import numpy as np

from mono_gbdt.config import ConstraintMode
from mono_gbdt.constraints.base import IntervalEngine
from mono_gbdt.tree import SplitCandidate, Tree


class NoneEngine(IntervalEngine):
    """Ignores declared directions: no bounds, no ordering checks, no penalty."""
    mode = ConstraintMode.NONE

    def __init__(self, directions):
        super().__init__(directions)
        self.directions = np.zeros_like(self.declared)


class BasicEngine(IntervalEngine):
    """Both children of a monotone split are bounded by the midpoint of their outputs."""
    mode = ConstraintMode.BASIC

    def _tighten(self, tree: Tree, node_id: int, candidate: SplitCandidate) -> set[int]:
        s = int(self.directions[candidate.feature])
        if s == 0:
            return set()
        node = tree.nodes[node_id]
        mid = (candidate.left_output + candidate.right_output) / 2.0
        if s > 0:
            self._cap(node.left, mid)
            self._floor(node.right, mid)
        else:
            self._floor(node.left, mid)
            self._cap(node.right, mid)
        return set()
