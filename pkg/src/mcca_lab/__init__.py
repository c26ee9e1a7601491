"""Linear and deep multiway CCA for multi-subject stimulus-response data."""

__version__ = "0.1.0"
