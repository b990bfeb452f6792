"""Compositional thermal reservoir simulation and BHP schedule optimization."""

__version__ = "0.1.0"
