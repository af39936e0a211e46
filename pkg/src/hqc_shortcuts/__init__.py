"""Shortcut-to-adiabatic holonomic gates in decoherence-free subspaces."""

from .campaign import Campaign

__all__ = ["Campaign"]
