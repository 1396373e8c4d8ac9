"""Spectral gap and Cheeger constant experiments on random complex plane curves."""

__version__ = "0.1.0"
