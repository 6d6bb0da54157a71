"""Numerical toolkit for Landau-de Gennes Q-tensor minimizers in the
logarithmic energy regime: solver, scale analysis, defect diagnostics and
ε-sweep experiments."""

__version__ = "0.1.0"
