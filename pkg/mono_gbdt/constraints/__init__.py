"""Constraint engines, one per monotone method."""
from __future__ import annotations

from mono_gbdt.config import ConstraintMode, parse_mode
from mono_gbdt.constraints.base import (
    ConstraintEngine,
    ConstraintUpdateReport,
    SplitBounds,
    bounds_for_split,
)
from mono_gbdt.constraints.basic import BasicEngine, NoneEngine
from mono_gbdt.constraints.fast import FastEngine
from mono_gbdt.constraints.penalty import PenaltyParams, penalty
from mono_gbdt.constraints.slow import PiecewiseConstraint, SlowEngine, recompute_all_constraints

ENGINES = {
    ConstraintMode.NONE: NoneEngine,
    ConstraintMode.BASIC: BasicEngine,
    ConstraintMode.FAST: FastEngine,
    ConstraintMode.SLOW: SlowEngine,
}


def make_engine(mode: ConstraintMode | str, directions) -> ConstraintEngine:
    return ENGINES[parse_mode(mode)](directions)


__all__ = [
    "ENGINES", "make_engine", "ConstraintEngine", "ConstraintUpdateReport", "SplitBounds",
    "bounds_for_split", "BasicEngine", "NoneEngine", "FastEngine", "SlowEngine",
    "PiecewiseConstraint", "recompute_all_constraints", "PenaltyParams", "penalty",
]
