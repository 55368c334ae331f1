"""Numerical homogenization of Stokes systems with periodic coefficients."""

__version__ = "0.1.0"
