"""Numerical laboratory for the reduced distance (l-function) and reduced
volume of explicit backward Ricci flows."""

__version__ = "0.1.0"
