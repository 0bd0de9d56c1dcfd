"""Finite-depth laboratory for large deviations of quadratic maps."""

__version__ = "0.1.0"
