"""Unrolled ISTA/ADMM/ReLU networks for sparse recovery, their generalization
and estimation error bounds, and empirical estimation-error experiments."""

__version__ = "0.1.0"
