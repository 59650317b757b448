"""Teach-and-repeat topometric localization with lidar and radar."""

__version__ = "0.1.0"
