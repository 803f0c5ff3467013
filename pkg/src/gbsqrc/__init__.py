"""Photon-statistics reservoir computing with simulated Gaussian light."""

__version__ = "0.1.0"
