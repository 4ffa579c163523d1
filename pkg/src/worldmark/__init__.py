"""Benchmark harness for action-conditioned image-to-video world models."""

__version__ = "0.1.0"
