"""Adaptive-moment optimizer over named parameter dicts."""

from __future__ import annotations

import numpy as np

__all__ = ["Adam", "NonFiniteGradient"]


class NonFiniteGradient(Exception):
    """Raised when a step is attempted with non-finite gradients."""


class Adam:
    """Bias-corrected Adam. Updates parameter arrays in place.

    State (first/second moment accumulators, step counter) is keyed by
    parameter name; shapes are pinned at first sight of each parameter.
    """

    def __init__(self, params: dict[str, np.ndarray], lr=3e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        """One update. Rejects the whole step if any gradient is non-finite."""
        for name in self.params:
            g = grads.get(name)
            if g is None:
                continue
            if g.shape != self.params[name].shape:
                raise ValueError(
                    f"grad shape {g.shape} != param shape {self.params[name].shape} for {name!r}"
                )
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(f"non-finite gradient for {name!r} at step {self.step_count + 1}")
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for name, g in grads.items():
            if name not in self.params:
                raise KeyError(f"unknown parameter {name!r}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            self.params[name] -= self.lr * update


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most max_norm."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    norm = float(np.sqrt(total))
    if norm > max_norm > 0:
        factor = max_norm / norm
        for g in grads.values():
            g *= factor
    return norm
