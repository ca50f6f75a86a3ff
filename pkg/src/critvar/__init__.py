"""Identify security-critical program variables from execution traces."""

__version__ = "0.1.0"
