"""Simulation and verification lab for disconnection of the discrete cylinder by a drifted walk."""

__version__ = "0.1.0"
