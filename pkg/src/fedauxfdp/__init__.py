"""Simulator for federated ensemble distillation with differentially private client heads."""

__version__ = "0.1.0"
