"""Individualized treatment rules for prioritized outcomes."""

__version__ = "0.1.0"
