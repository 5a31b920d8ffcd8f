"""Robust fine-tuning with perturbation-strength schedules on synthetic tasks."""

__version__ = "0.1.0"
