"""Distributed anycast census."""

__version__ = "0.1.0"
