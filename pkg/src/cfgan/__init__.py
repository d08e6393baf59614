"""Characteristic-function distances, two-sample tests and CF-GAN training."""

__version__ = "0.1.0"
