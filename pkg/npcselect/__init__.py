"""Permutation-test variable selection for replicated measurements, with Lasso/Ridge baselines."""

__version__ = "0.1.0"
