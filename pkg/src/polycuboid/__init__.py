"""Polycuboid fitting for noisy indoor point clouds."""

__version__ = "0.1.0"
