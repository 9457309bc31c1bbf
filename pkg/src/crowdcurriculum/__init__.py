"""Crowd-label aggregation, item difficulty and curriculum training."""

__version__ = "0.1.0"
