"""Efficient multi-camera BEV instance prediction."""

__version__ = "0.1.0"
