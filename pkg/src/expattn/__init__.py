"""Expander-based sparse attention patterns for graph transformers."""

__version__ = "0.1.0"
