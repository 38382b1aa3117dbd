"""Gaze-guided global-focal student-teacher transformer."""

__version__ = "0.1.0"
