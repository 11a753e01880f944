"""Adaptive-moment optimizer and the stepped learning-rate schedule."""

from __future__ import annotations

import numpy as np

from .params import ParamStore

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8

LR_DECAY_PER_EPOCH = 10.0 ** -0.05
LR_FLOOR = 5e-6


class OptimizerState:
    """First/second moment buffers plus step counter for one parameter store."""

    def __init__(self, store: ParamStore, learning_rate: float):
        self.learning_rate = float(learning_rate)
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in store.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in store.items()}


def adam_step(store: ParamStore, state: OptimizerState) -> None:
    """One in-place update; every parameter must carry a gradient."""
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - BETA1 ** t
    bc2 = 1.0 - BETA2 ** t
    for name, p in store.items():
        g = p.grad
        if g is None:
            raise ValueError(f"parameter '{name}' has no gradient; run backward first")
        m = state.m[name]
        v = state.v[name]
        m *= BETA1
        m += (1.0 - BETA1) * g
        v *= BETA2
        v += (1.0 - BETA2) * (g * g)
        p.data -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + EPSILON)


def lr_schedule(epoch: int, initial_lr: float, floor: float = LR_FLOOR) -> float:
    """Learning rate after ``epoch`` whole epochs: one factor of 10**-0.05
    per epoch, never below ``floor``."""
    if epoch < 0:
        raise ValueError(f"epoch must be non-negative, got {epoch}")
    return max(float(initial_lr) * LR_DECAY_PER_EPOCH ** epoch, float(floor))
