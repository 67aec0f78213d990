"""Finite-mixture logit estimation over point-set and grid supports."""

__version__ = "0.1.0"
