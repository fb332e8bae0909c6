"""Wavelet-guided adversarial denoising for microscopy-like images."""

__version__ = "0.1.0"
