"""Numerical laboratory for intersection measures of symmetric Markov chains."""

__version__ = "0.1.0"
