"""Executable constructions, feasibility checks and depth bounds for normalizing flows."""

__version__ = "0.1.0"
