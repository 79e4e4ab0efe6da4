# app/__init__.py
"""SEG entity alignment engine."""

__version__ = "0.3.0"
