"""Grounded video QA: rewards, token-level credit, zoom planning and evaluation."""

__version__ = "0.1.0"
