"""Desk-scale text-based person search with multi-integrity descriptions and attribute prompts."""

__version__ = "0.1.0"
