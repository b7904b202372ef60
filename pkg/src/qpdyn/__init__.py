"""Numerics for transport bounds of one-dimensional quasi-periodic Schrodinger operators."""

__version__ = "0.1.0"
