"""Multi-view 3D line mapping from 2D segment detections."""

__version__ = "0.1.0"
