"""Numerical laboratory for parabolic Anderson models with Gaussian noise."""

__version__ = "0.1.0"
