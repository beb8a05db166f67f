"""Choosing between marginal and conditional independence in trivariate Gaussian data."""

__version__ = "0.1.0"
