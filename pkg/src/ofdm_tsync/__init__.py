"""Two-stage OFDM timing synchronisation: cross-correlation acquisition plus a 1-D CNN."""

__version__ = "0.1.0"
