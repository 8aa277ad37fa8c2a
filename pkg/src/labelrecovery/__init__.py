"""OFDM link simulation with a self-supervised residual pre-equalizer."""

__version__ = "0.1.0"
