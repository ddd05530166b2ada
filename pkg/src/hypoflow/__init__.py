"""Numerical laboratory for phi-entropy decay under Fokker-Planck and kinetic Fokker-Planck flows."""

__version__ = "0.1.0"
