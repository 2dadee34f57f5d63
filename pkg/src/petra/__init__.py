"""Evolutionary search over compression/training pipelines for small neural networks."""

__version__ = "0.1.0"
