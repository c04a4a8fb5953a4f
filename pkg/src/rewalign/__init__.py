"""Reward redistribution by aligning demonstration event sequences."""

__version__ = "0.1.0"
