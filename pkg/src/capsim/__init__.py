"""Trace-driven simulation of node-capture detection in mobile networks."""

__version__ = "0.1.0"
