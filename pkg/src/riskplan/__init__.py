"""Predictive risk-field motion planning for intelligent vehicles."""

__version__ = "0.1.0"
