"""
mono_gbdt/errors.py — Exception hierarchy.

Library code raises these; only the CLI catches them and turns them into exit codes.
"""
from __future__ import annotations

from typing import Optional


class MonoGBDTError(Exception):
    """Base class for every error raised by mono_gbdt."""


class ParameterError(MonoGBDTError, ValueError):
    """Invalid parameter value or unknown configuration key."""


class DatasetError(MonoGBDTError):
    """Problem reading or shaping input data."""


class DatasetParseError(DatasetError):
    """Unreadable or malformed delimiter-separated file."""

    def __init__(self, message: str, row: Optional[int] = None):
        super().__init__(message)
        self.row = row


class SchemaError(DatasetError):
    """A column the schema needs is missing, or a column is not known to the schema."""

    def __init__(self, message: str, column: Optional[str] = None):
        super().__init__(message)
        self.column = column


class MetricError(MonoGBDTError, ValueError):
    """Metric inputs are inconsistent or the metric is undefined for them."""


class InfeasibleConstraintError(MonoGBDTError):
    """A leaf ended up with min bound > max bound."""

    def __init__(self, leaf_id: int, lower: float, upper: float):
        super().__init__(f"Leaf {leaf_id} has infeasible bounds [{lower!r}, {upper!r}]")
        self.leaf_id = leaf_id
        self.lower = lower
        self.upper = upper


class TrainingError(MonoGBDTError):
    """Training cannot start on the given data."""


class ModelFormatError(MonoGBDTError):
    """Model document is malformed, truncated or of an unknown version."""
