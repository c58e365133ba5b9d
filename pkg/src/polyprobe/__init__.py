"""Parameterized convex-polygon datasets, DCGAN training and Inception Score probes."""

__version__ = "0.1.0"
