"""Multi-horizon action-chunking policies with gated fusion, consensus-based
dynamic inference, and a synthetic point-mass benchmark."""

__version__ = "0.1.0"
