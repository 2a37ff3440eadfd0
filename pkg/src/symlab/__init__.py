"""Symmetry-based disentangled representation learning on a cyclic grid world."""

__version__ = "0.1.0"
