"""Hybrid global constructive optimization of arterial trees in voxel organ domains."""

__version__ = "0.1.0"
