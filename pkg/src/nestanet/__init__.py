"""Restarted NESTA for analysis-sparse recovery from subsampled Fourier data."""

__version__ = "0.1.0"
