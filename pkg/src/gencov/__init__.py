"""Debiased inference for genetic covariance between two outcomes."""

__version__ = "0.1.0"
