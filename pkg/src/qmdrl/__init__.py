"""Quantum multi-drone reinforcement learning simulator and training harness."""

__version__ = "0.1.0"
