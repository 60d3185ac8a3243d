"""Motion-focused video self-supervision toolkit."""

__version__ = "0.3.0"
