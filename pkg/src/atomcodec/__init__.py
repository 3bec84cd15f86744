"""Commitment-level context compression toolkit."""

__version__ = "0.1.0"
