"""
mono_gbdt/constraints/fast.py — Single-bound engine: sibling outputs seed the children's bounds,
then new outputs are pushed across every monotone ancestor.
"""
from __future__ import annotations

import logging

from mono_gbdt.config import ConstraintMode
from mono_gbdt.constraints.base import IntervalEngine, opposite_leaves
from mono_gbdt.tree import SplitCandidate, Tree

logger = logging.getLogger(__name__)


class FastEngine(IntervalEngine):
    mode = ConstraintMode.FAST

    def _tighten(self, tree: Tree, node_id: int, candidate: SplitCandidate) -> set[int]:
        node = tree.nodes[node_id]
        s = int(self.directions[candidate.feature])
        if s > 0:
            self._cap(node.left, candidate.right_output)
            self._floor(node.right, candidate.left_output)
        elif s < 0:
            self._floor(node.left, candidate.right_output)
            self._cap(node.right, candidate.left_output)

        changed = set()
        for hit in opposite_leaves(tree, node_id, self.directions):
            outputs = [tree.nodes[c].value for c in hit.sources]
            if hit.gets_min:
                moved = self._floor(hit.target, max(outputs))
            else:
                moved = self._cap(hit.target, min(outputs))
            if moved:
                changed.add(hit.target)
        if changed:
            logger.debug("fast bounds tightened on %d leaf(s) after splitting node %d", len(changed), node_id)
        return changed
