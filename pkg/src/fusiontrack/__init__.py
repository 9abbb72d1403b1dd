"""Dual-channel Wi-Fi and acoustic tracking: simulation, fusion tracker, evaluation."""

__version__ = "0.1.0"
