"""Desk-scale audio-visual grounded word learning on a synthetic cartoon corpus."""

__version__ = "0.1.0"
