"""Simulation and statistical checks for DAG growth under random delays."""

__version__ = "0.1.0"
