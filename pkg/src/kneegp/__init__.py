"""Knee-point guided genetic programming for dynamic multi-mode project scheduling."""

__version__ = "0.1.0"
