"""Numerical checks of spectral-gap stability for frustration-free lattice Hamiltonians."""

__version__ = "0.1.0"
