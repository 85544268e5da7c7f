"""Evaluation toolkit for synthetic CT produced by 2D slice-based MRI-to-CT translation."""

__version__ = "0.1.0"
