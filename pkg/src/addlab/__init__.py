"""Desk-scale adversarial diffusion distillation on synthetic data."""

__version__ = "0.1.0"
