"""Exact small-register laboratory for correlated quantum noise."""

__version__ = "0.1.0"
