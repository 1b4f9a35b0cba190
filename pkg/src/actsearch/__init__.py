"""Surrogate-guided activation-function search at desk scale."""

__version__ = "0.1.0"
