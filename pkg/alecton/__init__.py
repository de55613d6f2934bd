"""Stochastic low-rank PSD recovery with Alecton, plus a theory-verification suite."""

__all__ = ["__version__"]

__version__ = "0.1.0"
