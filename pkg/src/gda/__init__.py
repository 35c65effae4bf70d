"""Generative data augmentation toolkit for Wi-Fi gesture spectrograms."""

__version__ = "0.1.0"
