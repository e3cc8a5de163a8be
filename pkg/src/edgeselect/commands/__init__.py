"""Command modules for edgeselect CLI."""

__all__ = ["gen_data", "calibrate", "select", "evaluate", "sweep"]
