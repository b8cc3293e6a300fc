"""
mono_gbdt/constraints/penalty.py — Depth penalty applied to the gain of monotone splits.
"""
from __future__ import annotations

from dataclasses import dataclass

from mono_gbdt.errors import ParameterError


def penalty(gamma: float, depth: int) -> float:
    """Gain multiplier for a monotone split at ``depth`` (root = 0).

    gamma = 0 never penalizes; levels with depth + 1 <= gamma forbid monotone splits outright.
    """
    if gamma < 0:
        raise ParameterError(f"gamma={gamma} must be >= 0")
    if depth < 0:
        raise ParameterError(f"depth={depth} must be >= 0")
    if gamma >= depth + 1:
        return 0.0
    if gamma <= 1:
        return 1.0 - gamma / 2.0 ** depth
    return 1.0 - 2.0 ** (gamma - 1 - depth)


@dataclass(frozen=True)
class PenaltyParams:
    gamma: float = 0.0
    epsilon: float = 1e-10

    def __post_init__(self):
        if self.gamma < 0:
            raise ParameterError(f"gamma={self.gamma} must be >= 0")
        if self.epsilon <= 0:
            raise ParameterError(f"epsilon={self.epsilon} must be > 0")

    def factor(self, depth: int) -> float:
        """Multiplier for monotone-split gains, epsilon included."""
        return penalty(self.gamma, depth) + self.epsilon
