"""Misbehavior detection and contribution scoring for federated learning
under a simulated secure-aggregation boundary."""

__version__ = "0.1.0"
