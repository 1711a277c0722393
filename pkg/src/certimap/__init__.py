"""Certified obstacle maps under odometry drift."""

__version__ = "0.1.0"
