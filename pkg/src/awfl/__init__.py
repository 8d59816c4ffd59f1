"""Asynchronous wireless federated learning: joint client-selection and
bandwidth optimisation, a round-based training simulator and baselines."""

__version__ = "0.1.0"
