"""Bounding-box conditioned transformer for multi-object 6D pose estimation,
with pose metrics and object-relative camera localization."""

__version__ = "0.1.0"
