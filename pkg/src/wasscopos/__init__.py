"""Wasserstein-ball bounds for uncertain mixed 0-1 linear programs."""

__version__ = "0.1.0"
