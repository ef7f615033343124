"""Abstractive opinion summarization over clusters of reviews."""

__version__ = "0.1.0"
