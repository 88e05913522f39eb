"""Desk-scale endoscope navigation: simulator, training stack, live console."""

__version__ = "0.1.0"

from .scope import Action

__all__ = ["Action", "__version__"]
