"""Morpho-evolution with learning and a controller archive."""

__version__ = "0.1.0"
