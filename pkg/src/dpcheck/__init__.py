"""Coupling-based differential privacy checker for a small probabilistic language."""

__version__ = "0.1.0"
