"""Stationarity certificates, constraint qualifications, penalty traces and
error-bound estimates for programs with vanishing constraints."""

__version__ = "0.1.0"
