"""Spectral vanishing viscosity simulator for the stochastic incompressible
Euler equations on the periodic torus."""

__version__ = "0.1.0"
