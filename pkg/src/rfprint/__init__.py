"""RF-fingerprint drone controller classification pipeline."""

__version__ = "0.1.0"
