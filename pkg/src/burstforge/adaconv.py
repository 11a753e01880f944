"""Per-pixel adaptive convolution and the weighted residual reconstruction.

Every pixel of a frame gets its own S x S filter. The denoised estimate for
frame i blends that filtered frame with a directly predicted residual map,
gated per pixel by a sigmoid weight; the final output averages the per-frame
estimates. Disabling the residual branch degenerates to the plain average of
filtered frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import Tensor, mean0, narrow0, reshape, sigmoid, stack0
from .diffcore.tensor import _accum, _from_op


@dataclass
class KernelField:
    """Per-frame, per-pixel S x S kernels: values [N, S*S, H, W]."""

    values: Tensor

    def __post_init__(self):
        if self.values.ndim != 4:
            raise ValueError(f"kernel field must be [N,S*S,H,W], got {self.values.shape}")
        s = int(round(self.values.shape[1] ** 0.5))
        if s * s != self.values.shape[1] or s % 2 == 0:
            raise ValueError(
                f"kernel channel count {self.values.shape[1]} is not an odd square"
            )

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def kernel_size(self) -> int:
        return int(round(self.values.shape[1] ** 0.5))


@dataclass
class ResidualField:
    """Per-frame residual maps: values [N, H, W]."""

    values: Tensor

    def __post_init__(self):
        if self.values.ndim != 3:
            raise ValueError(f"residual field must be [N,H,W], got {self.values.shape}")


@dataclass
class WeightField:
    """Pre-sigmoid blend logits: logits [N, H, W]."""

    logits: Tensor

    def __post_init__(self):
        if self.logits.ndim != 3:
            raise ValueError(f"weight field must be [N,H,W], got {self.logits.shape}")


def adaptive_conv(frame: Tensor, kernels: Tensor) -> Tensor:
    """Apply a different S x S kernel at every pixel of a [H,W] frame.

    ``kernels`` is [S*S, H, W]; entry (u*S + v, i, j) multiplies the frame
    value at (i + u - r, j + v - r) with r = (S-1)//2. Out-of-bounds
    neighbors replicate the nearest edge pixel, so a constant frame stays
    exact at the borders.
    """
    if frame.ndim != 2:
        raise ValueError(f"frame must be [H,W], got {frame.shape}")
    if kernels.ndim != 3 or kernels.shape[1:] != frame.shape:
        raise ValueError(
            f"kernels {kernels.shape} do not cover frame extents {frame.shape}"
        )
    s2 = kernels.shape[0]
    s = int(round(s2 ** 0.5))
    if s * s != s2 or s % 2 == 0:
        raise ValueError(f"kernel channel count {s2} is not an odd square")

    h, w = frame.shape
    r = (s - 1) // 2
    fp = np.pad(frame.data, r, mode="edge") if r else frame.data
    out = np.zeros((h, w), dtype=np.result_type(frame.data, kernels.data))
    for j in range(s2):
        dy, dx = divmod(j, s)
        out += kernels.data[j] * fp[dy:dy + h, dx:dx + w]

    def backward(g):
        if kernels.requires_grad:
            gk = np.empty_like(kernels.data)
            for j in range(s2):
                dy, dx = divmod(j, s)
                gk[j] = g * fp[dy:dy + h, dx:dx + w]
            _accum(kernels, gk)
        if frame.requires_grad:
            gp = np.zeros((h + 2 * r, w + 2 * r), dtype=g.dtype)
            for j in range(s2):
                dy, dx = divmod(j, s)
                gp[dy:dy + h, dx:dx + w] += g * kernels.data[j]
            if r:
                # fold the replicate-padding margins back onto the edges
                gp[r, :] += gp[:r, :].sum(axis=0)
                gp[r + h - 1, :] += gp[r + h:, :].sum(axis=0)
                mid = gp[r:r + h, :]
                mid[:, r] += mid[:, :r].sum(axis=1)
                mid[:, r + w - 1] += mid[:, r + w:].sum(axis=1)
                gp = np.ascontiguousarray(mid[:, r:r + w])
            _accum(frame, gp)

    return _from_op(out, (frame, kernels), backward)


def per_frame_prediction(frame: Tensor, kernels: Tensor, residual: Tensor,
                         weight_logits: Tensor) -> Tensor:
    """One frame's estimate: sigmoid-weighted blend of filtered frame and residual.

    Computed as A + (sigmoid(W) - 1) * (A - R) with A the adaptive-conv
    output: algebraically the convex blend, and bit-exact both when the
    sigmoid saturates to 1 and when R equals A.
    """
    if residual.shape != frame.shape or weight_logits.shape != frame.shape:
        raise ValueError(
            f"residual {residual.shape} / weights {weight_logits.shape} "
            f"do not match frame {frame.shape}"
        )
    conv_out = adaptive_conv(frame, kernels)
    gate = sigmoid(weight_logits)
    return conv_out + (gate - 1.0) * (conv_out - residual)


def _frames_of(burst) -> Tensor:
    frames = getattr(burst, "frames", burst)
    if frames.ndim != 3:
        raise ValueError(f"burst frames must be [N,H,W], got {frames.shape}")
    if frames.shape[0] < 1:
        raise ValueError("burst must contain at least one frame")
    return frames


def _frame_slice(stack: Tensor, i: int) -> Tensor:
    return reshape(narrow0(stack, i, 1), stack.shape[1:])


def reconstruct(burst, kernel_field: KernelField, residual_field: ResidualField,
                weight_field: WeightField):
    """Full reconstruction: per-frame blended estimates and their mean.

    Returns (denoised [H,W], per_frame [N,H,W]); per-frame estimates are
    materialized because the annealed loss supervises each one.
    """
    frames = _frames_of(burst)
    n = frames.shape[0]
    kv = kernel_field.values
    if kv.shape[0] != n or kv.shape[2:] != frames.shape[1:]:
        raise ValueError(f"kernel field {kv.shape} does not match burst {frames.shape}")
    if residual_field.values.shape != frames.shape:
        raise ValueError(
            f"residual field {residual_field.values.shape} does not match burst {frames.shape}"
        )
    if weight_field.logits.shape != frames.shape:
        raise ValueError(
            f"weight field {weight_field.logits.shape} does not match burst {frames.shape}"
        )
    preds = []
    for i in range(n):
        preds.append(
            per_frame_prediction(
                _frame_slice(frames, i),
                reshape(narrow0(kv, i, 1), kv.shape[1:]),
                _frame_slice(residual_field.values, i),
                _frame_slice(weight_field.logits, i),
            )
        )
    per_frame = stack0(preds)
    return mean0(per_frame), per_frame


def _kernel_only_pair(burst, kernel_field: KernelField):
    frames = _frames_of(burst)
    n = frames.shape[0]
    kv = kernel_field.values
    if kv.shape[0] != n or kv.shape[2:] != frames.shape[1:]:
        raise ValueError(f"kernel field {kv.shape} does not match burst {frames.shape}")
    preds = [
        adaptive_conv(_frame_slice(frames, i), reshape(narrow0(kv, i, 1), kv.shape[1:]))
        for i in range(n)
    ]
    per_frame = stack0(preds)
    return mean0(per_frame), per_frame


def reconstruct_kernel_only(burst, kernel_field: KernelField) -> Tensor:
    """Mean of adaptively filtered frames, no residual blending."""
    denoised, _ = _kernel_only_pair(burst, kernel_field)
    return denoised
