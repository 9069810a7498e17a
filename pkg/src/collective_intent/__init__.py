"""Decentralized multi-robot human intent prediction: simulation, models, consensus."""

__version__ = "0.1.0"
