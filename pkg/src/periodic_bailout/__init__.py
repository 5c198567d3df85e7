"""Optimal periodic dividends with classical capital injection for spectrally negative Levy models."""

__version__ = "0.1.0"
