"""Numerical lab for non-uniqueness of the Oberbeck-Boussinesq system with gravity."""

__version__ = "0.1.0"
