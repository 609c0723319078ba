"""Neumann-Poincare spectra and shape sensitivities on smooth boundaries."""

__version__ = "0.1.0"
