"""Training objective: gamma-domain error with an annealed per-frame term.

The basic loss compares gamma-corrected images by mean squared error plus a
mean absolute difference of forward-difference gradients. The total loss
adds every per-frame estimate's basic loss, weighted by beta * alpha**t so
early iterations supervise each frame individually and the weight fades as
training proceeds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import Tensor, absolute, clamped_power, forward_diff, mean_all, narrow0, reshape, scale

GAMMA_EXPONENT = 1.0 / 2.2


@dataclass(frozen=True)
class LossConfig:
    lambda_grad: float = 1.0
    alpha: float = 0.9998
    beta: float = 100.0
    gamma_exponent: float = GAMMA_EXPONENT

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0,1), got {self.alpha}")
        if self.beta <= 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.lambda_grad < 0:
            raise ValueError(f"lambda_grad must be non-negative, got {self.lambda_grad}")


def gamma_correct(image: Tensor, exponent: float = GAMMA_EXPONENT) -> Tensor:
    """Clamp to [0,1] and raise to the display exponent; differentiable."""
    return clamped_power(image, exponent, 0.0, 1.0)


def gamma_correct_array(image: np.ndarray, exponent: float = GAMMA_EXPONENT) -> np.ndarray:
    """Plain-array twin of gamma_correct for metric/report paths."""
    return np.power(np.clip(image, 0.0, 1.0), exponent)


def basic_loss(pred: Tensor, gt: Tensor, cfg: LossConfig) -> Tensor:
    """MSE plus weighted mean |gradient| mismatch, both in gamma domain."""
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} does not match target {gt.shape}")
    gp = gamma_correct(pred, cfg.gamma_exponent)
    gg = gamma_correct(gt, cfg.gamma_exponent)
    diff = gp - gg
    loss = mean_all(diff * diff)
    if cfg.lambda_grad:
        grad_term = mean_all(absolute(forward_diff(diff, 0))) + mean_all(
            absolute(forward_diff(diff, 1))
        )
        loss = loss + scale(grad_term, cfg.lambda_grad)
    return loss


def anneal_weight(t: int, cfg: LossConfig) -> float:
    """Per-frame supervision weight at iteration t: beta * alpha**t."""
    if t < 0:
        raise ValueError(f"iteration index must be non-negative, got {t}")
    return cfg.beta * cfg.alpha ** t


def total_loss(denoised: Tensor, per_frame: Tensor, gt: Tensor, t: int,
               cfg: LossConfig) -> Tensor:
    """basic_loss of the fused output plus the annealed sum of per-frame losses."""
    if per_frame.ndim != 3 or per_frame.shape[1:] != gt.shape:
        raise ValueError(
            f"per-frame stack {per_frame.shape} does not match target {gt.shape}"
        )
    loss = basic_loss(denoised, gt, cfg)
    weight = anneal_weight(t, cfg)
    n = per_frame.shape[0]
    acc = basic_loss(reshape(narrow0(per_frame, 0, 1), gt.shape), gt, cfg)
    for i in range(1, n):
        acc = acc + basic_loss(reshape(narrow0(per_frame, i, 1), gt.shape), gt, cfg)
    return loss + scale(acc, weight)
