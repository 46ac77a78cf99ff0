"""Particle engine for zero-sum mean-field-type differential games on the flat torus."""

__version__ = "0.1.0"
