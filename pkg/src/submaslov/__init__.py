"""Maslov indices, focal points and index forms of geodesics under semi-Riemannian submersions."""

__version__ = "0.1.0"
