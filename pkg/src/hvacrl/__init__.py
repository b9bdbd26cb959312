"""Offline RL for HVAC control on surrogate building simulators."""

__version__ = "0.1.0"
