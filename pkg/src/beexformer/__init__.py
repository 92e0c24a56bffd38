"""Binarized early-exit transformer encoder for text classification."""

__version__ = "0.1.0"
