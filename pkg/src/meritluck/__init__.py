"""Simulation and estimation toolkit for redistribution under outcome and opportunity luck."""

__version__ = "0.1.0"
