"""Recurrent text editing on synthetic arithmetic tasks."""

__version__ = "0.1.0"
