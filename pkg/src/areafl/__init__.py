"""Simulator and verification toolkit for asynchronous exact averaging (AREA)."""

__version__ = "0.1.0"
