"""Probabilistic time-series forecasting with a state-space mean head and a
positive-output standard-deviation head."""

__version__ = "0.1.0"
