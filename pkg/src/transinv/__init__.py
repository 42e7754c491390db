"""Forward and inverse problems for first-order transport equations."""

__version__ = "0.1.0"
