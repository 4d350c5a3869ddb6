"""Spatio-temporal attention pipeline for manipulated-video detection."""

__version__ = "0.1.0"
