"""Plain SGD with coupled L2 weight decay and optional global-norm clipping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import NumericError


@dataclass
class SgdConfig:
    learning_rate: float = 0.01
    weight_decay: float = 0.001
    max_grad_norm: float | None = None

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if self.max_grad_norm is not None and self.max_grad_norm <= 0:
            raise ValueError(f"max_grad_norm must be positive, got {self.max_grad_norm}")


def global_grad_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))


def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             cfg: SgdConfig) -> dict[str, np.ndarray]:
    """One update p <- p - lr * (g + wd * p); returns a new parameter dict.

    Gradients are clipped by global norm first when max_grad_norm is set.
    Non-finite gradients abort the step.
    """
    if set(params) != set(grads):
        raise ValueError("params and grads are not aligned: "
                         f"{sorted(set(params) ^ set(grads))}")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
    scale = 1.0
    if cfg.max_grad_norm is not None:
        norm = global_grad_norm(grads)
        if norm > cfg.max_grad_norm:
            scale = cfg.max_grad_norm / norm
    lr, wd = cfg.learning_rate, cfg.weight_decay
    return {name: p - lr * (scale * grads[name] + wd * p)
            for name, p in params.items()}
