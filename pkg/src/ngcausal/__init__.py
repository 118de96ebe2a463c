"""Neural Granger causality for two interacting agents' kinematic time series."""

__version__ = "0.1.0"
