"""Grounded bug report generation for GUI apps and its evaluation harness."""

__version__ = "0.1.0"
