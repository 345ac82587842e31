"""Generative retrieval with preference optimization for product search, at desk scale."""

__version__ = "0.1.0"
