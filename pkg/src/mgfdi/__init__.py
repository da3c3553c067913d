"""Parallel-converter DC microgrid simulator with hybrid FDI detection."""

__version__ = "0.1.0"
