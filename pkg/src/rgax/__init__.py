"""Player evaluation metrics with residualization and GCM inference."""

__version__ = "0.1.0"
