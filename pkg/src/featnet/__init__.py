"""Feature networks: graph structure imposed on ML feature vectors."""

__version__ = "0.1.0"
