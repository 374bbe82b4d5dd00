"""Coordinate-dropout geometry checks and a BEC-augmented toy Transformer."""

__version__ = "0.1.0"
