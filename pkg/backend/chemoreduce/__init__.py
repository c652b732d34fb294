"""Chemostat competition-for-resource simulation and its direct competition reduction."""

__version__ = "0.1.0"
