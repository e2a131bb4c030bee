"""Numerical laboratory for the perturbed bi-wave inverse problem."""
__version__ = "0.1.0"
