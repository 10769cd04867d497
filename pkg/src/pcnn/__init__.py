"""Patch-based convolutional network for multi-view 3D shape retrieval."""

__version__ = "0.1.0"
