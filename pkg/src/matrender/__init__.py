"""Spectral path tracing and evaluation tools for measured-IOR material benchmarks."""

__version__ = "0.1.0"
