"""Graphical multiple testing for group sequential trials."""

__version__ = "0.1.0"
