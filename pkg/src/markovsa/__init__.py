"""Stochastic approximation with Markov iterate-dependent noise: simulation,
lock-in probability bounds, and Monte Carlo checks."""

__version__ = "0.1.0"
