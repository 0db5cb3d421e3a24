"""Time-frequency domain mixture networks: frequency-domain layers, training and verification."""

__version__ = "0.1.0"
