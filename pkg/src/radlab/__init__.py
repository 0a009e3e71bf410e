"""Radiance-field lab with a swappable representation color space."""

__version__ = "0.1.0"
