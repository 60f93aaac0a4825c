"""Soft-sensor regression toolkit."""
__version__ = "0.1.0"
