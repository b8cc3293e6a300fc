"""Monotone-constrained gradient boosting — histogram GBDT with basic, fast and slow constraint modes."""
__version__ = "0.1.0"
