"""Omnidirectional (ERP) image super-resolution."""

__version__ = "0.1.0"
