"""Certified reduced basis methods for parametrized saddle point problems."""

__version__ = "0.1.0"
