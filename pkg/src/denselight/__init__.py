"""Desk-scale traffic signal control: simulator, dense rewards, baselines and a PPO learner."""

__version__ = "0.1.0"
