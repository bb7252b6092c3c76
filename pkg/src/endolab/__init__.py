"""Robustly transitive torus endomorphisms with persistent critical sets: constructions and numerical checks."""

__version__ = "0.1.0"
