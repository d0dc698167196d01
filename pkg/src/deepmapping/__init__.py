"""DeepMapping: multi-scan Lidar registration by optimising pose and occupancy networks."""

__version__ = "0.1.0"
