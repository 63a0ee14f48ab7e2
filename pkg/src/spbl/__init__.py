"""Supervised learning of sparsity-promoting regularizers for linear inverse problems."""

__version__ = "0.1.0"
