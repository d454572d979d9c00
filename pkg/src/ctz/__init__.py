"""Universal N-block compression and classification with data-driven context trees."""

__version__ = "0.1.0"
