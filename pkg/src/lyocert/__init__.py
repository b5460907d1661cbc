"""Desk-scale certification of classical and integral stability properties."""

__version__ = "0.1.0"
