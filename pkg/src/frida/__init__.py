"""Incremental unsupervised domain adaptation through generative feature replay."""

__version__ = "0.1.0"
