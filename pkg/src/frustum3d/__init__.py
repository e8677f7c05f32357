"""Frustum point-cloud 3D detection with channel-reweighted box estimation."""

__version__ = "0.1.0"
