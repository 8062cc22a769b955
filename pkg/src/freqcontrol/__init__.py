"""Decentralized generator and load-side primary frequency control."""
__version__ = "0.1.0"
