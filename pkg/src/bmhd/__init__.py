"""Spectral laboratory for compressible viscous MHD near constant equilibrium."""

__version__ = "0.1.0"
