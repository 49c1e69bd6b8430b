"""Stableness-of-resistance estimation with survey callbacks."""

__version__ = "0.1.0"
