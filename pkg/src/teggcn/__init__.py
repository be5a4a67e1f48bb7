"""Graph convolution with a transfer-entropy feature correction."""
__version__ = "0.1.0"
