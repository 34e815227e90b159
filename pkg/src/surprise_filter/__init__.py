"""Surprise-guided sensor filtering for linear-Gaussian world-model agents."""

__version__ = "0.1.0"
