"""Federated-learning simulator with a neuron-wise label-flipping defense."""
from .engine import DEFENSES, ExperimentConfig, run_experiment

__version__ = "0.1.0"

__all__ = ["DEFENSES", "ExperimentConfig", "run_experiment", "__version__"]
