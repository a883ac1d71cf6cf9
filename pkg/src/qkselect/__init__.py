"""Recommend quantum-kernel encoding circuits from classical data-complexity features."""

__version__ = "0.1.0"
