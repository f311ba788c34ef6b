"""Unsupervised anomaly detection on AIS vessel trajectories with sparsified temporal graphs."""

from .ingest import AisPoint, ConfigError, Track
from .numerics import NumericError
from .pipeline import DataError

__all__ = ["AisPoint", "ConfigError", "DataError", "NumericError", "Track"]
__version__ = "0.1.0"
