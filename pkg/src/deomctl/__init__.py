"""Dissipaton-based weak-field optimal control for open quantum systems."""

__version__ = "0.1.0"
