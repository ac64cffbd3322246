"""Seeker-based 6-DOF lunar landing simulator with recurrent PPO training."""

__version__ = "0.1.0"
