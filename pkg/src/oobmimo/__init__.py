"""Massive-MIMO downlink simulator for the spatial distribution of PA out-of-band distortion."""

__version__ = "0.1.0"
