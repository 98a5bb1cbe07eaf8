"""Frequency-severity insurance pricing models and tariff tools."""

__version__ = "0.1.0"
