"""Heterogeneous hypergraph neural networks for context-aware activity recognition."""

__version__ = "0.1.0"
