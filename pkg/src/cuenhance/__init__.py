"""Exemplar-guided unpaired image enhancement with cooperative downstream training."""

__version__ = "0.1.0"
