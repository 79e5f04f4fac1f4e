"""Sampling of Whittle-Matern Gaussian random fields on (0, 1) by sinc-Galerkin finite elements."""

__version__ = "0.1.0"
