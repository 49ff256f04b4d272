"""Load-altering attacks on an on-load tap changer and their localization."""

__version__ = "0.1.0"
