"""Continuous-time neural dynamic equivalents for power-grid simulation."""

__version__ = "0.1.0"
