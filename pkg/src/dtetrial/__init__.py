"""Bayesian two-arm phase II survival designs with a delayed treatment effect."""

__version__ = "0.1.0"
