"""Numerical laboratory for Schrodinger flows with confining potentials."""

__version__ = "0.1.0"
