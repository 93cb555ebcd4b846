"""Desk-scale testbed federation core."""

__version__ = "0.1.0"
