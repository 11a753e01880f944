"""Spatial and structural operations on tracked tensors.

Layout conventions: feature maps are [C, H, W], convolution weights are
[C_out, C_in, k, k] with odd square k, and all strided windows are taken in
row-major order so argmax-style ties resolve to the first (top-left) entry.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, _accum, _from_op


def _corr(x: np.ndarray, w: np.ndarray, stride: int, padding: int):
    """Cross-correlate [C,H,W] with [O,C,k,k]; returns (out, cols).

    ``cols`` is the unfolded [C*k*k, H_out*W_out] patch matrix, kept so the
    weight gradient is a single matmul against it.
    """
    c, h, wd = x.shape
    o, _, k, _ = w.shape
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    cols = win.transpose(0, 3, 4, 1, 2).reshape(c * k * k, ho * wo)
    out = (w.reshape(o, c * k * k) @ cols).reshape(o, ho, wo)
    return out, cols


def _dilate(g: np.ndarray, stride: int) -> np.ndarray:
    if stride == 1:
        return g
    c, h, w = g.shape
    out = np.zeros((c, (h - 1) * stride + 1, (w - 1) * stride + 1), dtype=g.dtype)
    out[:, ::stride, ::stride] = g
    return out


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """2-D cross-correlation of a [C,H,W] map with [C_out,C,k,k] filters.

    Output extent per axis is (H + 2*padding - k) // stride + 1. The input
    gradient is the stride-dilated output gradient correlated with the
    spatially flipped, channel-transposed filters.
    """
    if x.ndim != 3 or weight.ndim != 4:
        raise ValueError(f"conv2d expects [C,H,W] and [O,C,k,k], got {x.shape} and {weight.shape}")
    c, h, w = x.shape
    o, ci, k, k2 = weight.shape
    if ci != c:
        raise ValueError(f"filter input channels {ci} do not match feature channels {c}")
    if k != k2 or k % 2 == 0:
        raise ValueError(f"filters must be square with odd extent, got {k}x{k2}")
    if bias is not None and bias.shape != (o,):
        raise ValueError(f"bias shape {bias.shape} does not match {o} output channels")
    if h + 2 * padding < k or w + 2 * padding < k:
        raise ValueError(f"input {h}x{w} too small for {k}x{k} filters with padding {padding}")

    out, cols = _corr(x.data, weight.data, stride, padding)
    if bias is not None:
        out = out + bias.data[:, None, None]
    ho, wo = out.shape[1:]

    def backward(g):
        if weight.requires_grad:
            gw = (g.reshape(o, ho * wo) @ cols.T).reshape(weight.data.shape)
            _accum(weight, gw)
        if bias is not None and bias.requires_grad:
            _accum(bias, g.sum(axis=(1, 2)))
        if x.requires_grad:
            gd = _dilate(g, stride)
            wt = weight.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
            gx, _ = _corr(gd, np.ascontiguousarray(wt), 1, k - 1)
            # strided forward may ignore trailing rows/cols; restore them as zeros
            pad_h = h + 2 * padding - gx.shape[1]
            pad_w = w + 2 * padding - gx.shape[2]
            if pad_h or pad_w:
                gx = np.pad(gx, ((0, 0), (0, pad_h), (0, pad_w)))
            if padding:
                gx = gx[:, padding:padding + h, padding:padding + w]
            _accum(x, np.ascontiguousarray(gx))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _from_op(out, parents, backward)


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 mean pooling with stride 2; extents must be even."""
    c, h, w = _even_extents(x, "avg_pool2")
    data = x.data.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))

    def backward(g):
        gx = np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) * 0.25
        _accum(x, gx.astype(x.data.dtype, copy=False))

    return _from_op(data, (x,), backward)


def max_pool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; ties take the first entry in row-major order."""
    c, h, w = _even_extents(x, "max_pool2")
    win = (
        x.data.reshape(c, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 3, 2, 4)
        .reshape(c, h // 2, w // 2, 4)
    )
    am = win.argmax(axis=3)
    data = np.take_along_axis(win, am[..., None], axis=3)[..., 0]

    def backward(g):
        buf = np.zeros_like(win)
        np.put_along_axis(buf, am[..., None], g[..., None], axis=3)
        gx = (
            buf.reshape(c, h // 2, w // 2, 2, 2)
            .transpose(0, 1, 3, 2, 4)
            .reshape(c, h, w)
        )
        _accum(x, gx)

    return _from_op(np.ascontiguousarray(data), (x,), backward)


def _even_extents(x: Tensor, name: str):
    if x.ndim != 3:
        raise ValueError(f"{name} expects [C,H,W], got {x.shape}")
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"{name} requires even extents, got {h}x{w}")
    return c, h, w


def upsample2_nearest(x: Tensor) -> Tensor:
    """Double both spatial extents by pixel replication."""
    if x.ndim != 3:
        raise ValueError(f"upsample2_nearest expects [C,H,W], got {x.shape}")
    c, h, w = x.shape
    data = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)

    def backward(g):
        gx = g.reshape(c, h, 2, w, 2).sum(axis=(2, 4))
        _accum(x, gx)

    return _from_op(data, (x,), backward)


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate [C_i, H, W] maps along the channel axis."""
    parts = list(parts)
    if not parts:
        raise ValueError("concat_channels needs at least one tensor")
    trailing = parts[0].shape[1:]
    for p in parts:
        if p.ndim != parts[0].ndim or p.shape[1:] != trailing:
            raise ValueError("concat_channels requires matching trailing extents")
    data = np.concatenate([p.data for p in parts], axis=0)
    sizes = [p.shape[0] for p in parts]

    def backward(g):
        start = 0
        for p, n in zip(parts, sizes):
            _accum(p, g[start:start + n])
            start += n

    return _from_op(data, tuple(parts), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """[C,H,W] -> [C] spatial mean per channel."""
    c, h, w = _hw3(x, "global_avg_pool")
    data = x.data.mean(axis=(1, 2))

    def backward(g):
        _accum(x, np.broadcast_to(g[:, None, None] / (h * w), x.data.shape).astype(x.data.dtype, copy=False))

    return _from_op(data, (x,), backward)


def global_max_pool(x: Tensor) -> Tensor:
    """[C,H,W] -> [C] spatial max per channel; first index wins ties."""
    c, h, w = _hw3(x, "global_max_pool")
    flat = x.data.reshape(c, h * w)
    am = flat.argmax(axis=1)
    data = np.take_along_axis(flat, am[:, None], axis=1)[:, 0]

    def backward(g):
        buf = np.zeros_like(flat)
        np.put_along_axis(buf, am[:, None], g[:, None], axis=1)
        _accum(x, buf.reshape(c, h, w))

    return _from_op(np.ascontiguousarray(data), (x,), backward)


def channel_mean(x: Tensor) -> Tensor:
    """[C,H,W] -> [1,H,W] mean over channels."""
    c, _, _ = _hw3(x, "channel_mean")
    data = x.data.mean(axis=0, keepdims=True)

    def backward(g):
        _accum(x, np.broadcast_to(g / c, x.data.shape).astype(x.data.dtype, copy=False))

    return _from_op(data, (x,), backward)


def channel_max(x: Tensor) -> Tensor:
    """[C,H,W] -> [1,H,W] max over channels; first channel wins ties."""
    _hw3(x, "channel_max")
    am = x.data.argmax(axis=0)
    data = np.take_along_axis(x.data, am[None], axis=0)

    def backward(g):
        buf = np.zeros_like(x.data)
        np.put_along_axis(buf, am[None], g, axis=0)
        _accum(x, buf)

    return _from_op(np.ascontiguousarray(data), (x,), backward)


def _hw3(x: Tensor, name: str):
    if x.ndim != 3:
        raise ValueError(f"{name} expects [C,H,W], got {x.shape}")
    return x.shape


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    data = x.data.reshape(shape)

    def backward(g):
        _accum(x, g.reshape(x.data.shape))

    return _from_op(data, (x,), backward)


def narrow0(x: Tensor, start: int, length: int) -> Tensor:
    """Slice [start, start+length) along the leading axis."""
    if not (0 <= start and start + length <= x.shape[0]):
        raise ValueError(f"narrow0 [{start}:{start + length}] out of range for leading extent {x.shape[0]}")
    data = x.data[start:start + length]

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[start:start + length] = g
        _accum(x, gx)

    return _from_op(data, (x,), backward)


def stack0(parts: Sequence[Tensor]) -> Tensor:
    """Stack same-shape tensors along a new leading axis."""
    parts = list(parts)
    if not parts:
        raise ValueError("stack0 needs at least one tensor")
    shape = parts[0].shape
    for p in parts:
        if p.shape != shape:
            raise ValueError("stack0 requires identical shapes")
    data = np.stack([p.data for p in parts], axis=0)

    def backward(g):
        for i, p in enumerate(parts):
            _accum(p, g[i])

    return _from_op(data, tuple(parts), backward)


def mean0(x: Tensor) -> Tensor:
    """Mean over the leading axis."""
    n = x.shape[0]
    data = x.data.mean(axis=0)

    def backward(g):
        _accum(x, np.broadcast_to(g / n, x.data.shape).astype(x.data.dtype, copy=False))

    return _from_op(data, (x,), backward)


def forward_diff(x: Tensor, axis: int) -> Tensor:
    """Forward difference of a [H,W] map along ``axis`` with replicate edge.

    The final row (axis 0) or column (axis 1) is zero: replicating the edge
    makes the last difference vanish, so the output keeps the input shape.
    """
    if x.ndim != 2:
        raise ValueError(f"forward_diff expects [H,W], got {x.shape}")
    if axis not in (0, 1):
        raise ValueError(f"axis must be 0 or 1, got {axis}")
    data = np.zeros_like(x.data)
    if axis == 0:
        data[:-1, :] = x.data[1:, :] - x.data[:-1, :]
    else:
        data[:, :-1] = x.data[:, 1:] - x.data[:, :-1]

    def backward(g):
        gx = np.zeros_like(x.data)
        if axis == 0:
            gx[1:, :] += g[:-1, :]
            gx[:-1, :] -= g[:-1, :]
        else:
            gx[:, 1:] += g[:, :-1]
            gx[:, :-1] -= g[:, :-1]
        _accum(x, gx)

    return _from_op(data, (x,), backward)
