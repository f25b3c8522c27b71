"""Dual-reciprocity inclusion-based boundary element solver for heat transfer in bonded bi-layers."""

__version__ = "0.1.0"
