"""Bitmap-backed user profile store."""

__version__ = "0.1.0"
