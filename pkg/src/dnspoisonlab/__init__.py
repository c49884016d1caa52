"""Deterministic simulator of off-path DNS cache poisoning."""

__version__ = "0.1.0"
