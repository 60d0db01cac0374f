"""Micro-ring perceptron (MiRP) RF sensing simulator.

Subpackages: ``physics`` (closed-form chain and noise models, the damped
readout kernel), ``nn`` (numpy CNN with a trainable physical front end),
``datasets``, ``harness`` (training and power sweeps) and ``cli``.
"""
from . import config, datasets, physics, rng
from .config import ConfigError, ExperimentConfig

__all__ = ["config", "datasets", "physics", "rng", "ConfigError", "ExperimentConfig"]
