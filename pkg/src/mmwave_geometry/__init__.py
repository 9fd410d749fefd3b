"""Classify the geometry of a fixed mmWave link from its telemetry."""

__version__ = "0.1.0"
