"""Unsupervised group DRO with a learned group assigner and cross-group mixing."""

__version__ = "0.1.0"
