"""Taxi supply and demand-mismatch analytics from partially observed trip records."""

__version__ = "0.1.0"
