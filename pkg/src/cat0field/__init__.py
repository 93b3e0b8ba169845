"""Geometry engine for proper CAT(0) model spaces and finite fields of them."""

__version__ = "0.1.0"
