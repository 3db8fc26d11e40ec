"""Dual-stream time/frequency self-supervised features for sleep staging."""

__version__ = "0.1.0"
