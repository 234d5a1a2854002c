"""Model-based versus model-free sample efficiency on linear quadratic problems."""

__version__ = "0.1.0"
