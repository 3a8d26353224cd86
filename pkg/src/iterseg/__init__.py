"""Iterative instance-by-instance segmentation of chained structures in 3D volumes."""

__version__ = "0.1.0"
