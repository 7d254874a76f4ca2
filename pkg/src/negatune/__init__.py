"""Data factory and evaluation harness for negative-aware agent tuning."""

__version__ = "0.1.0"
