"""Simulation and analysis toolkit for horizontal attacks on atomic-pattern ECC."""

__version__ = "0.1.0"
