"""Federated-learning simulator with secure aggregation and a latent-space
linear-leakage reconstruction attack."""

__version__ = "0.1.0"
