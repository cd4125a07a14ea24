"""Recurrent-network price forecasting toolkit."""

__version__ = "0.1.0"
