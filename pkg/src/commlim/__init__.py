"""Simulator and verification lab for k-bit blackboard distributed estimation."""

__version__ = "0.1.0"
