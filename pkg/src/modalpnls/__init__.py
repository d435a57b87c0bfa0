"""Numerical laboratory for the modally filtered parametric NLS system."""

__version__ = "0.1.0"
