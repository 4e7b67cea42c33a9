"""Referential color-communication lab: task simulation, director policies,
simulated matchers and a DQN director."""

__version__ = "0.1.0"
