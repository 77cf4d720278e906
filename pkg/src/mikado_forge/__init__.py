"""Numerical toolkit for stationary convex integration on the torus."""

__version__ = "0.1.0"
