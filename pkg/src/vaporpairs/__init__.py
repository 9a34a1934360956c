"""Simulation and analysis of narrowband biphotons from EIT-assisted SFWM in hot vapor."""

__version__ = "0.1.0"
