"""Knowledge-graph-enhanced sea surface temperature forecasting."""

__version__ = "0.1.0"
