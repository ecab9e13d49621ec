"""Deterministic multi-drone collaborative BEV perception simulator."""

__version__ = "0.1.0"
