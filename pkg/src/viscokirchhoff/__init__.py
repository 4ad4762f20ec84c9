"""Simulator and blow-up certificate checker for the viscoelastic Kirchhoff wave equation."""

__version__ = "0.1.0"
