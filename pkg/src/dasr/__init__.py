"""Infrared super-resolution with texture- and noise-oriented adaptation."""

__version__ = "0.1.0"
