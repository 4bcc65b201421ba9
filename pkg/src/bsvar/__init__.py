"""Bayesian structural vector autoregressions."""

__version__ = "0.1.0"
