"""Cross-domain face verification experiment framework."""

__version__ = "0.1.0"
