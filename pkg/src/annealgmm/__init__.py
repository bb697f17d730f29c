"""Annealed Gaussian mixtures and their cascade of phase transitions."""

__version__ = "0.1.0"
