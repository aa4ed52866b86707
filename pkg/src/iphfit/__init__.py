"""Interval phase-type approximation of general delays and analysis of the resulting Markov models."""

__version__ = "0.1.0"
