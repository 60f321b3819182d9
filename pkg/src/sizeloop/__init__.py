"""Closed-loop transistor sizing against a SPICE simulator."""

__version__ = "0.1.0"
