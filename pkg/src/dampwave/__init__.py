"""Numerical toolkit for energy estimates of damped wave equations with
time-dependent, possibly fast-oscillating speed and dissipation."""

__version__ = "0.1.0"
