"""Version information for edgeselect."""

__version__ = "0.1.0"
