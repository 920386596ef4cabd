"""Heavy-traffic toolkit for k-limited cyclic polling systems."""

__version__ = "0.1.0"
