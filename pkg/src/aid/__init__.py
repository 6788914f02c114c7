"""Adaptive interventional debugging: from predicate logs to a causal path."""

__version__ = "0.1.0"
