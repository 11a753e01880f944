"""The burst denoising network.

A U-Net backbone reads the noisy burst stacked with its noise map and emits
full-resolution features; two convolution heads turn those features into
per-pixel kernels plus residual maps, and blend-weight logits. Decoder
stages are refined by channel/spatial attention. Ablation flags switch the
attention stages and the residual branch off independently.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from . import configfile
from .adaconv import (
    KernelField,
    ResidualField,
    WeightField,
    _kernel_only_pair,
    reconstruct,
)
from .attention import (
    ChannelAttnParams,
    SpatialAttnParams,
    attn_block,
    default_reduction,
)
from .diffcore import (
    ParamStore,
    Tensor,
    avg_pool2,
    concat_channels,
    conv2d,
    load_checkpoint,
    narrow0,
    relu,
    reshape,
    save_checkpoint,
    upsample2_nearest,
)

DEFAULT_WIDTHS = (64, 128, 256, 512)


@dataclass(frozen=True)
class NetConfig:
    n_frames: int = 8
    kernel_size: int = 5
    encoder_widths: Tuple[int, ...] = DEFAULT_WIDTHS
    num_scales: int = 4
    channel_attn: bool = True
    spatial_attn: bool = True
    residual_branch: bool = True

    def __post_init__(self):
        object.__setattr__(self, "encoder_widths", tuple(int(w) for w in self.encoder_widths))
        if self.n_frames < 1:
            raise ValueError(f"burst length must be at least 1, got {self.n_frames}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel size must be odd and positive, got {self.kernel_size}")
        if self.num_scales != len(self.encoder_widths):
            raise ValueError(
                f"num_scales {self.num_scales} does not match "
                f"{len(self.encoder_widths)} encoder widths"
            )
        if any(w < 1 for w in self.encoder_widths):
            raise ValueError(f"encoder widths must be positive, got {self.encoder_widths}")

    @property
    def kr_channels(self) -> int:
        """Channels of the kernel/residual head: N*S*S kernels (+N residuals)."""
        base = self.n_frames * self.kernel_size * self.kernel_size
        return base + (self.n_frames if self.residual_branch else 0)

    @property
    def w_channels(self) -> int:
        """Channels of the blend-weight head; 0 when the residual branch is off."""
        return self.n_frames if self.residual_branch else 0

    def to_text(self) -> str:
        return configfile.serialize_config(
            {
                "n_frames": self.n_frames,
                "kernel_size": self.kernel_size,
                "encoder_widths": ",".join(str(w) for w in self.encoder_widths),
                "num_scales": self.num_scales,
                "channel_attn": self.channel_attn,
                "spatial_attn": self.spatial_attn,
                "residual_branch": self.residual_branch,
            }
        )

    @classmethod
    def from_mapping(cls, entries: dict) -> "NetConfig":
        base = cls()
        widths = entries.get("encoder_widths")
        widths = (
            tuple(int(w) for w in widths.split(",")) if widths else base.encoder_widths
        )
        return cls(
            n_frames=int(entries.get("n_frames", base.n_frames)),
            kernel_size=int(entries.get("kernel_size", base.kernel_size)),
            encoder_widths=widths,
            num_scales=int(entries.get("num_scales", len(widths))),
            channel_attn=configfile.parse_bool(str(entries.get("channel_attn", base.channel_attn))),
            spatial_attn=configfile.parse_bool(str(entries.get("spatial_attn", base.spatial_attn))),
            residual_branch=configfile.parse_bool(str(entries.get("residual_branch", base.residual_branch))),
        )


def build_ablation(model_id: int, **overrides) -> NetConfig:
    """Model variants 1..6: which of the three modules are enabled.

    1: none  2: channel attention  3: spatial attention  4: both attentions
    5: residual branch only       6: everything
    """
    flags = {
        1: (False, False, False),
        2: (True, False, False),
        3: (False, True, False),
        4: (True, True, False),
        5: (False, False, True),
        6: (True, True, True),
    }
    if model_id not in flags:
        raise ValueError(f"model id must be in 1..6, got {model_id}")
    ch, sp, res = flags[model_id]
    return NetConfig(channel_attn=ch, spatial_attn=sp, residual_branch=res, **overrides)


MODEL_IDS = tuple(range(1, 7))


@dataclass
class Burst:
    """Noisy input frames [N,H,W], linear intensities; frame 0 is the reference."""

    frames: Tensor

    def __post_init__(self):
        if self.frames.ndim != 3 or 0 in self.frames.shape:
            raise ValueError(f"burst frames must be non-empty [N,H,W], got {self.frames.shape}")
        if self.frames.data.min() < 0:
            raise ValueError("burst frames must be clamped to [0, inf) at ingestion")

    @classmethod
    def from_arrays(cls, frames, dtype=None, requires_grad: bool = False) -> "Burst":
        """Ingest raw frame data, clamping negatives (noise can undershoot 0)."""
        arr = np.asarray(frames)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        return cls(Tensor(np.maximum(arr, 0), requires_grad=requires_grad))

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def extents(self) -> Tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]

    def reference(self) -> np.ndarray:
        return self.frames.data[0]


@dataclass
class PredictionBundle:
    kernels: KernelField
    residuals: Optional[ResidualField] = None
    weights: Optional[WeightField] = None


@dataclass
class _DecoderStage:
    channel: Optional[ChannelAttnParams] = None
    spatial: Optional[SpatialAttnParams] = None
    names: dict = field(default_factory=dict)


class KernelPredictionNet:
    """Feature extractor plus kernel/residual and weight heads.

    Parameters are created once from ``seed`` and live in ``self.params``;
    forward passes read them by name, so checkpoint loads that overwrite
    parameter data are picked up immediately.
    """

    def __init__(self, config: NetConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params = ParamStore()
        self._stages: list[_DecoderStage] = []
        self._init_params(np.random.default_rng(seed))

    # -- construction -----------------------------------------------------

    def _new_conv(self, rng, name: str, c_in: int, c_out: int, k: int = 3):
        std = np.sqrt(2.0 / (c_in * k * k))
        w = rng.normal(0.0, std, size=(c_out, c_in, k, k)).astype(self.dtype)
        self.params.register(f"{name}.weight", Tensor(w, requires_grad=True))
        self.params.register(
            f"{name}.bias", Tensor(np.zeros(c_out, dtype=self.dtype), requires_grad=True)
        )

    def _init_params(self, rng):
        cfg = self.config
        widths = cfg.encoder_widths
        c = cfg.n_frames + 1
        for i, w in enumerate(widths):
            self._new_conv(rng, f"encoder.s{i}.conv1", c, w)
            self._new_conv(rng, f"encoder.s{i}.conv2", w, w)
            c = w
        bottleneck = 2 * widths[-1]
        self._new_conv(rng, "bottleneck.conv1", widths[-1], bottleneck)
        self._new_conv(rng, "bottleneck.conv2", bottleneck, bottleneck)

        c = bottleneck
        self._stages = [None] * cfg.num_scales
        for i in reversed(range(cfg.num_scales)):
            w = widths[i]
            stage = _DecoderStage()
            self._new_conv(rng, f"decoder.s{i}.conv1", c + w, w)
            self._new_conv(rng, f"decoder.s{i}.conv2", w, w)
            if cfg.channel_attn:
                r = default_reduction(w)
                mid = w // r
                fc1 = rng.normal(0.0, np.sqrt(2.0 / w), size=(mid, w, 1, 1)).astype(self.dtype)
                fc2 = rng.normal(0.0, np.sqrt(2.0 / mid), size=(w, mid, 1, 1)).astype(self.dtype)
                t1 = self.params.register(
                    f"decoder.s{i}.channel_attn.fc1.weight", Tensor(fc1, requires_grad=True)
                )
                t2 = self.params.register(
                    f"decoder.s{i}.channel_attn.fc2.weight", Tensor(fc2, requires_grad=True)
                )
                stage.channel = ChannelAttnParams(t1, t2, r)
            if cfg.spatial_attn:
                sw = rng.normal(0.0, np.sqrt(2.0 / (2 * 49)), size=(1, 2, 7, 7)).astype(self.dtype)
                t = self.params.register(
                    f"decoder.s{i}.spatial_attn.conv.weight", Tensor(sw, requires_grad=True)
                )
                stage.spatial = SpatialAttnParams(t)
            self._stages[i] = stage
            c = w

        self._new_conv(rng, "kernel_head", widths[0], cfg.kr_channels)
        if cfg.residual_branch:
            self._new_conv(rng, "weight_head", widths[0], cfg.w_channels)

    @property
    def n_parameters(self) -> int:
        return self.params.n_values()

    # -- forward ----------------------------------------------------------

    def _conv(self, name: str, x: Tensor, padding: int = 1) -> Tensor:
        return conv2d(
            x, self.params[f"{name}.weight"], self.params[f"{name}.bias"], padding=padding
        )

    def _block(self, name: str, x: Tensor) -> Tensor:
        return relu(self._conv(f"{name}.conv2", relu(self._conv(f"{name}.conv1", x))))

    def _stack_input(self, burst: Burst, noise_map) -> Tensor:
        cfg = self.config
        if burst.n_frames != cfg.n_frames:
            raise ValueError(
                f"burst has {burst.n_frames} frames, network expects {cfg.n_frames}"
            )
        nm = noise_map if isinstance(noise_map, Tensor) else Tensor(
            np.asarray(noise_map, dtype=self.dtype)
        )
        if nm.ndim == 2:
            nm = reshape(nm, (1,) + nm.shape)
        if nm.shape[1:] != burst.frames.shape[1:] or nm.shape[0] != 1:
            raise ValueError(
                f"noise map {nm.shape} does not match frame extents {burst.frames.shape[1:]}"
            )
        h, w = burst.extents
        factor = 1 << cfg.num_scales
        if h % factor or w % factor:
            raise ValueError(
                f"extents {h}x{w} not divisible by {factor}; pad the burst first "
                f"(the command-line denoiser replicate-pads and crops back)"
            )
        return concat_channels([burst.frames, nm])

    def extract_features(self, burst: Burst, noise_map) -> Tensor:
        """U-Net pass over [burst, noise map]; output [width0, H, W]."""
        cfg = self.config
        x = self._stack_input(burst, noise_map)
        skips = []
        for i in range(cfg.num_scales):
            x = self._block(f"encoder.s{i}", x)
            skips.append(x)
            x = avg_pool2(x)
        x = self._block("bottleneck", x)
        for i in reversed(range(cfg.num_scales)):
            x = upsample2_nearest(x)
            x = concat_channels([x, skips[i]])
            x = self._block(f"decoder.s{i}", x)
            stage = self._stages[i]
            x = attn_block(x, stage.channel, stage.spatial, cfg.channel_attn, cfg.spatial_attn)
        return x

    def predict(self, burst: Burst, noise_map) -> PredictionBundle:
        """Features -> kernel field (+ residual and weight fields)."""
        cfg = self.config
        features = self.extract_features(burst, noise_map)
        kr = self._conv("kernel_head", features)
        n, s2 = cfg.n_frames, cfg.kernel_size * cfg.kernel_size
        h, w = burst.extents
        kernels = KernelField(reshape(narrow0(kr, 0, n * s2), (n, s2, h, w)))
        if not cfg.residual_branch:
            return PredictionBundle(kernels=kernels)
        residuals = ResidualField(narrow0(kr, n * s2, n))
        weights = WeightField(self._conv("weight_head", features))
        return PredictionBundle(kernels=kernels, residuals=residuals, weights=weights)

    def forward(self, burst: Burst, noise_map):
        """Full denoising pass: (denoised [H,W], per_frame [N,H,W])."""
        bundle = self.predict(burst, noise_map)
        if self.config.residual_branch:
            return reconstruct(burst, bundle.kernels, bundle.residuals, bundle.weights)
        return _kernel_only_pair(burst, bundle.kernels)

    # -- persistence -------------------------------------------------------

    def save(self, path, extra_meta: str = "") -> None:
        meta = self.config.to_text()
        if extra_meta:
            meta += extra_meta if extra_meta.endswith("\n") else extra_meta + "\n"
        save_checkpoint(path, self.params, meta_text=meta)

    @classmethod
    def load(cls, path, dtype=np.float32) -> "KernelPredictionNet":
        store, meta = load_checkpoint(path)
        config = NetConfig.from_mapping(configfile.parse_config_text(meta))
        net = cls(config, seed=0, dtype=dtype)
        mine, theirs = set(net.params.names()), set(store.names())
        if mine != theirs:
            missing = sorted(mine - theirs)
            extra = sorted(theirs - mine)
            raise ValueError(
                f"{path}: parameter names do not match config "
                f"(missing {missing[:3]}, unexpected {extra[:3]})"
            )
        for name, loaded in store.items():
            target = net.params[name]
            if loaded.data.shape != target.data.shape:
                raise ValueError(
                    f"{path}: '{name}' has shape {loaded.data.shape}, "
                    f"expected {target.data.shape}"
                )
            target.data = loaded.data.astype(net.dtype, copy=False)
        return net


def with_scaled_widths(config: NetConfig, divisor: int) -> NetConfig:
    """Same architecture with every stage width divided (minimum 1)."""
    widths = tuple(max(1, w // divisor) for w in config.encoder_widths)
    return replace(config, encoder_widths=widths)
