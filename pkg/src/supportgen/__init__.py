"""Retrieval-augmented supportive dialogue generation with cognitive-state fusion."""

__version__ = "0.1.0"
