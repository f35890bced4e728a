"""Polynomial scenario representation and trajectory prediction toolkit."""
__version__ = "0.1.0"
