"""Diffusion-based audio restoration in an invertible constant-Q domain."""

__version__ = "0.1.0"
