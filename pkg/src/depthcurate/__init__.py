"""Data curation, loss/reward math, and evaluation tooling for depth-from-RGB training."""

__version__ = "0.1.0"
