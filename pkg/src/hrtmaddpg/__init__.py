"""Hierarchical RNN + transformer critics for multi-agent DDPG, with MADDPG and
RMADDPG baselines and four particle-world scenarios."""

__version__ = "0.1.0"
