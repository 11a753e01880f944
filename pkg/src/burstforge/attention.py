"""Channel and spatial gating of feature maps.

Channel gate: sigmoid of a shared two-layer bottleneck applied to both the
average-pooled and max-pooled channel descriptors, summed. Spatial gate:
sigmoid of a single wide convolution over the stacked channel-mean and
channel-max maps. Both multiply the input map; applied channel first.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .diffcore import (
    Tensor,
    channel_max,
    channel_mean,
    concat_channels,
    conv2d,
    global_avg_pool,
    global_max_pool,
    relu,
    reshape,
    sigmoid,
)

DEFAULT_REDUCTION = 16
DEFAULT_SPATIAL_KERNEL = 7


def default_reduction(channels: int) -> int:
    """Bottleneck ratio: 16 for wide maps, full rank for narrow ones."""
    if channels >= DEFAULT_REDUCTION and channels % DEFAULT_REDUCTION == 0:
        return DEFAULT_REDUCTION
    return channels


@dataclass
class ChannelAttnParams:
    """Shared bottleneck weights C -> C/r -> C, stored as 1x1 conv filters."""

    fc1: Tensor
    fc2: Tensor
    reduction: int

    def __post_init__(self):
        c_mid, c, _, _ = self.fc1.shape
        c_out, c_mid2, _, _ = self.fc2.shape
        if c_out != c or c_mid2 != c_mid:
            raise ValueError(
                f"bottleneck shapes inconsistent: {self.fc1.shape} then {self.fc2.shape}"
            )
        if self.reduction < 1 or c % self.reduction != 0:
            raise ValueError(f"reduction {self.reduction} does not divide {c} channels")
        if c_mid != c // self.reduction:
            raise ValueError(
                f"mid width {c_mid} does not match {c}/{self.reduction}"
            )

    @property
    def channels(self) -> int:
        return self.fc2.shape[0]


@dataclass
class SpatialAttnParams:
    """Single conv over the 2-channel pooled descriptor."""

    conv: Tensor

    def __post_init__(self):
        o, c, k, k2 = self.conv.shape
        if o != 1 or c != 2 or k != k2 or k % 2 == 0:
            raise ValueError(
                f"spatial gate conv must be [1,2,k,k] with odd k, got {self.conv.shape}"
            )

    @property
    def kernel_size(self) -> int:
        return self.conv.shape[2]


def init_channel_attention(channels: int, rng: np.random.Generator,
                           reduction: Optional[int] = None,
                           dtype=np.float32) -> ChannelAttnParams:
    r = default_reduction(channels) if reduction is None else reduction
    if r < 1 or channels % r != 0:
        raise ValueError(f"reduction {r} does not divide {channels} channels")
    mid = channels // r
    fc1 = rng.normal(0.0, np.sqrt(2.0 / channels), size=(mid, channels, 1, 1))
    fc2 = rng.normal(0.0, np.sqrt(2.0 / mid), size=(channels, mid, 1, 1))
    return ChannelAttnParams(
        Tensor(fc1.astype(dtype), requires_grad=True),
        Tensor(fc2.astype(dtype), requires_grad=True),
        r,
    )


def init_spatial_attention(rng: np.random.Generator,
                           kernel_size: int = DEFAULT_SPATIAL_KERNEL,
                           dtype=np.float32) -> SpatialAttnParams:
    fan_in = 2 * kernel_size * kernel_size
    w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(1, 2, kernel_size, kernel_size))
    return SpatialAttnParams(Tensor(w.astype(dtype), requires_grad=True))


def channel_attention(x: Tensor, params: ChannelAttnParams) -> Tensor:
    """Rescale each channel by its learned gate; output shape equals input."""
    c = x.shape[0]
    if c != params.channels:
        raise ValueError(f"map has {c} channels, gate built for {params.channels}")

    def bottleneck(v: Tensor) -> Tensor:
        h = reshape(v, (c, 1, 1))
        return conv2d(relu(conv2d(h, params.fc1)), params.fc2)

    gate = sigmoid(bottleneck(global_avg_pool(x)) + bottleneck(global_max_pool(x)))
    return gate * x


def spatial_attention(x: Tensor, params: SpatialAttnParams) -> Tensor:
    """Rescale each spatial position by its learned gate."""
    k = params.kernel_size
    descriptor = concat_channels([channel_mean(x), channel_max(x)])
    gate = sigmoid(conv2d(descriptor, params.conv, padding=(k - 1) // 2))
    return gate * x


def attn_block(x: Tensor,
               ch_params: Optional[ChannelAttnParams],
               sp_params: Optional[SpatialAttnParams],
               enable_channel: bool,
               enable_spatial: bool) -> Tensor:
    """Channel gate then spatial gate; disabled stages are the identity."""
    out = x
    if enable_channel:
        if ch_params is None:
            raise ValueError("channel attention enabled but no parameters supplied")
        out = channel_attention(out, ch_params)
    if enable_spatial:
        if sp_params is None:
            raise ValueError("spatial attention enabled but no parameters supplied")
        out = spatial_attention(out, sp_params)
    return out
