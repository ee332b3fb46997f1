"""Hyperbolic open-world detection toolkit: ball geometry, losses, relabeling and a synthetic benchmark."""

__version__ = "0.1.0"
