"""Layer saturation analysis for small neural networks."""

__version__ = "0.1.0"
