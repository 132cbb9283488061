"""Glioma segmentation fusion and subclass classification at desk scale."""

__version__ = "0.1.0"
