"""Spatio-temporal multi-horizon influenza forecasting."""

__version__ = "0.1.0"
