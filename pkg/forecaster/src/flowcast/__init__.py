"""Traffic density forecasting over exported spatiotemporal flow matrices."""

__version__ = "0.1.0"
