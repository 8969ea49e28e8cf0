"""Hierarchical binary regression: auxiliary variables, GLM links and occupancy models."""

__version__ = "0.1.0"
