"""Multi-person articulated reconstruction with layered implicit fields."""

__version__ = "0.1.0"
