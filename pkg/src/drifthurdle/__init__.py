"""Drifter-derived ocean covariates, Matern kriging and hurdle-Gamma spatio-temporal models."""

__version__ = "0.1.0"
