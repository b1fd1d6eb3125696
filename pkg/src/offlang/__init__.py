"""Offensive-language classification toolkit built from first principles."""

__version__ = "0.1.0"
