"""Gaussian-process field mapping from rigid sensor arrays with noisy positions."""

__version__ = "0.1.0"
