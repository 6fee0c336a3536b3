"""Agentic canvas-diagram synthesis toolkit."""

__version__ = "0.1.0"
