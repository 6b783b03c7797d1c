"""Monotone surrogate modeling and control optimization for chiller plants."""

__version__ = "0.1.0"
