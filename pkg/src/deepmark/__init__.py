"""Blind, robust image watermarking with a trainable encoder/embedder/extractor network."""

__version__ = "0.1.0"
