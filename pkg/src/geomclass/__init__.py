"""Geometry classification with elliptic Fourier features and sequence networks."""

__version__ = "0.1.0"
