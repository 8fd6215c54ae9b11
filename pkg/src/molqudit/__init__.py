"""Pulse-level simulator and compiler for a Yb electro-nuclear spin qudit."""

__version__ = "0.1.0"
