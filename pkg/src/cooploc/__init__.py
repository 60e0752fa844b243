"""Consistent distributed cooperative localization for planar robot teams."""

__version__ = "0.1.0"
