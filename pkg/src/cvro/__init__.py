"""Robust fixed-time and real-time signal timing from connected-vehicle trajectories."""

__version__ = "0.1.0"
