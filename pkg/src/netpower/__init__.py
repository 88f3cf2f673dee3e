"""Corporate control indices on ownership networks."""

__version__ = "0.1.0"
