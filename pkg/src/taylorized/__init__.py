"""Taylorized neural networks: order-k Taylor expansions of a network in its parameters."""

__version__ = "0.1.0"
