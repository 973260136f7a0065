"""Decoding Braille from neuromorphic tactile event streams."""

__version__ = "0.1.0"
