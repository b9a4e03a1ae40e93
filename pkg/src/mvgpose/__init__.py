"""Geometry-aware multi-view object pose estimation at desk scale."""

__version__ = "0.1.0"
