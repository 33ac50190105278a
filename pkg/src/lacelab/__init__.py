"""Numerical laboratory for the continuous-time lace expansion."""

__version__ = "0.1.0"
