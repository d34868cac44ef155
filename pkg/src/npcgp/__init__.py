"""Nonparametric convolved Gaussian processes with pathwise sampling."""

__version__ = "0.1.0"
