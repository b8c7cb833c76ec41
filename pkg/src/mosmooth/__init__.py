"""Decoupled data-association and smoothing tracker for multi-object
smoothing, with its scene simulator and trajectory metrics."""

__version__ = "0.1.0"
