"""MLP trend prediction refined by stacked channel-independent convolutions."""
__version__ = "0.1.0"
