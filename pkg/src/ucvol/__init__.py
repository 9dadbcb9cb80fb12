"""Discrete Cartesian volumes of distance-constrained two-body assembly regions."""
__version__ = "0.1.0"
