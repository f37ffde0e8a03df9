"""Shared autoregressive behavioral states across a population of multivariate series."""

__version__ = "0.1.0"
