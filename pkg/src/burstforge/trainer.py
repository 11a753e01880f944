"""Training loop and ablation sweeps.

Data flows burst synthesis -> network forward -> annealed loss ->
backward -> adaptive-moment step. Every random draw derives from the
master seed through named SeedSequence children, so the sequence of
batch seeds (and therefore the whole run) is a pure function of the
configuration.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from . import figures
from .burstgen import (
    GAIN_PRESETS,
    OFFSET_MODES,
    ChartCorpus,
    DirectoryCorpus,
    GainPreset,
    sample_train_preset,
    synthesize_burst,
    write_dataset,
)
from .configfile import parse_config_text, serialize_config
from .diffcore import OptimizerState, adam_step, lr_schedule, scale
from .diffcore.optim import LR_FLOOR
from .diffcore.tensor import Tensor
from .manifest import utc_now, write_manifest
from .metrics import EvalReport, combine_reports, evaluate, to_csv, to_per_image_csv, to_text
from .network import Burst, KernelPredictionNet, NetConfig, build_ablation
from .objective import LossConfig, anneal_weight, total_loss

DEFAULT_EPOCH_LENGTH = 2500
_CACHE_TAG = 0x43414348
_VAL_TAG = 0x56414C44


class TrainAbort(RuntimeError):
    """Raised when training hits a non-finite loss; message names the batch."""


@dataclass(frozen=True)
class TrainConfig:
    """Everything a training run depends on; defaults follow the full-scale recipe."""

    net: NetConfig = field(default_factory=NetConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    iterations: int = 80000
    batch_size: int = 16
    frame_size: int = 128
    initial_lr: float = 1e-4
    lr_floor: float = LR_FLOOR
    epoch_length: int = DEFAULT_EPOCH_LENGTH
    seed: int = 0
    corpus_dir: Optional[str] = None
    chart_count: int = 16
    checkpoint_every: int = 2500
    offset_mode: str = "frame"
    cached_bursts: int = 0
    train_preset: Optional[GainPreset] = None

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError(f"iterations must be at least 1, got {self.iterations}")
        for name in ("batch_size", "frame_size", "epoch_length",
                     "checkpoint_every", "chart_count"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.initial_lr <= 0 or self.lr_floor <= 0:
            raise ValueError("learning rates must be positive")
        if self.cached_bursts < 0:
            raise ValueError(f"cached_bursts must be nonnegative, got {self.cached_bursts}")
        if self.offset_mode not in OFFSET_MODES:
            raise ValueError(f"offset_mode must be one of {OFFSET_MODES}")
        factor = 1 << self.net.num_scales
        if self.frame_size % factor:
            raise ValueError(
                f"frame_size {self.frame_size} not divisible by 2^num_scales = {factor}"
            )

    def to_text(self) -> str:
        entries = dict(parse_config_text(self.net.to_text()))
        entries.update({
            "iterations": self.iterations,
            "batch_size": self.batch_size,
            "frame_size": self.frame_size,
            "initial_lr": repr(self.initial_lr),
            "lr_floor": repr(self.lr_floor),
            "epoch_length": self.epoch_length,
            "seed": self.seed,
            "chart_count": self.chart_count,
            "checkpoint_every": self.checkpoint_every,
            "offset_mode": self.offset_mode,
            "cached_bursts": self.cached_bursts,
            "lambda_grad": repr(self.loss.lambda_grad),
            "alpha": repr(self.loss.alpha),
            "beta": repr(self.loss.beta),
        })
        if self.corpus_dir:
            entries["corpus_dir"] = self.corpus_dir
        if self.train_preset is not None:
            entries["train_sigma_r"] = repr(self.train_preset.sigma_r)
            entries["train_sigma_s"] = repr(self.train_preset.sigma_s)
        return serialize_config(entries)

    @classmethod
    def from_mapping(cls, entries: dict) -> "TrainConfig":
        base = cls()
        preset = None
        if "train_sigma_r" in entries or "train_sigma_s" in entries:
            preset = GainPreset(float(entries["train_sigma_r"]),
                                float(entries["train_sigma_s"]))
        loss = LossConfig(
            lambda_grad=float(entries.get("lambda_grad", base.loss.lambda_grad)),
            alpha=float(entries.get("alpha", base.loss.alpha)),
            beta=float(entries.get("beta", base.loss.beta)),
        )
        return cls(
            net=NetConfig.from_mapping(entries),
            loss=loss,
            iterations=int(entries.get("iterations", base.iterations)),
            batch_size=int(entries.get("batch_size", base.batch_size)),
            frame_size=int(entries.get("frame_size", base.frame_size)),
            initial_lr=float(entries.get("initial_lr", base.initial_lr)),
            lr_floor=float(entries.get("lr_floor", base.lr_floor)),
            epoch_length=int(entries.get("epoch_length", base.epoch_length)),
            seed=int(entries.get("seed", base.seed)),
            corpus_dir=entries.get("corpus_dir") or None,
            chart_count=int(entries.get("chart_count", base.chart_count)),
            checkpoint_every=int(entries.get("checkpoint_every", base.checkpoint_every)),
            offset_mode=entries.get("offset_mode", base.offset_mode),
            cached_bursts=int(entries.get("cached_bursts", base.cached_bursts)),
            train_preset=preset,
        )


def paper_profile(**overrides) -> TrainConfig:
    """Full-scale recipe: 80000 iterations, batch 16, N=8, lr 1e-4."""
    return TrainConfig(**overrides)


def desk_profile(**overrides) -> TrainConfig:
    """CPU-scale recipe: N=4, 64px frames, quarter-width U-Net, 2000 iterations."""
    params = dict(
        net=NetConfig(n_frames=4, encoder_widths=(16, 32, 64, 128)),
        iterations=2000,
        batch_size=2,
        frame_size=64,
    )
    params.update(overrides)
    return TrainConfig(**params)


def open_corpus(config: TrainConfig):
    if config.corpus_dir:
        return DirectoryCorpus(config.corpus_dir)
    return ChartCorpus(count=config.chart_count)


def _draw_sample(config: TrainConfig, corpus, seq_key) -> Tuple[object, int]:
    """One burst from a named seed-sequence key; returns (sample, synth_seed)."""
    rng = np.random.default_rng(np.random.SeedSequence(seq_key))
    index = int(rng.integers(0, len(corpus)))
    preset = config.train_preset or sample_train_preset(rng)
    synth_seed = int(rng.integers(0, 2 ** 62))
    sample = synthesize_burst(
        corpus[index], config.net.n_frames, preset, synth_seed,
        frame_size=config.frame_size, offset_mode=config.offset_mode,
    )
    return sample, synth_seed


def build_cached_bursts(config: TrainConfig, corpus=None) -> list:
    """The frozen burst pool a cached_bursts > 0 run trains on."""
    if config.cached_bursts < 1:
        raise ValueError("config has no cached bursts")
    corpus = corpus if corpus is not None else open_corpus(config)
    return [
        _draw_sample(config, corpus, (config.seed, _CACHE_TAG, j))[0]
        for j in range(config.cached_bursts)
    ]


@dataclass
class TrainResult:
    checkpoint_path: str
    history: tuple
    out_dir: str
    net: KernelPredictionNet


def train(config: TrainConfig, out_dir: str, label: str = "model",
          progress=None, progress_every: int = 100) -> TrainResult:
    """Run the training loop, writing checkpoints, loss series, and a manifest.

    history rows are (iteration, mean batch loss, anneal weight, lr).
    Raises TrainAbort on a non-finite loss, naming the iteration and the
    synthesis seeds of the offending batch.
    """
    started = utc_now()
    os.makedirs(out_dir, exist_ok=True)
    corpus = open_corpus(config)
    net = KernelPredictionNet(config.net, seed=config.seed)
    state = OptimizerState(net.params, learning_rate=config.initial_lr)
    cache = build_cached_bursts(config, corpus) if config.cached_bursts else None
    history = []
    extra_meta = f"label = {label}\n"

    for t in range(config.iterations):
        lr = lr_schedule(t // config.epoch_length, config.initial_lr, config.lr_floor)
        state.learning_rate = lr
        batch = []
        batch_seeds = []
        for j in range(config.batch_size):
            if cache is not None:
                k = (t * config.batch_size + j) % len(cache)
                batch.append(cache[k])
                batch_seeds.append(cache[k].seed)
            else:
                sample, synth_seed = _draw_sample(config, corpus, (config.seed, t, j))
                batch.append(sample)
                batch_seeds.append(synth_seed)
        net.params.zero_grad()
        batch_loss = 0.0
        for sample in batch:
            burst = Burst.from_arrays(sample.frames, dtype=net.dtype)
            denoised, per_frame = net.forward(burst, sample.noise_map.astype(net.dtype))
            gt = Tensor(sample.ground_truth.astype(net.dtype))
            loss = total_loss(denoised, per_frame, gt, t, config.loss)
            scale(loss, 1.0 / config.batch_size).backward()
            batch_loss += loss.item() / config.batch_size
        if not np.isfinite(batch_loss):
            raise TrainAbort(
                f"non-finite loss {batch_loss} at iteration {t}; "
                f"batch synthesis seeds {batch_seeds}"
            )
        adam_step(net.params, state)
        history.append((t, batch_loss, anneal_weight(t, config.loss), lr))
        if progress is not None and ((t + 1) % progress_every == 0 or t == 0):
            progress(
                f"iteration {t + 1}/{config.iterations} "
                f"loss {batch_loss:.6f} anneal {history[-1][2]:.4g} lr {lr:.3g}"
            )
        if (t + 1) % config.checkpoint_every == 0 and (t + 1) < config.iterations:
            net.save(os.path.join(out_dir, f"checkpoint_{t + 1:06d}.bfck"),
                     extra_meta=extra_meta + f"iteration = {t + 1}\n")

    checkpoint_path = os.path.join(out_dir, "model.bfck")
    net.save(checkpoint_path, extra_meta=extra_meta + f"iteration = {config.iterations}\n")
    _write_loss_series(os.path.join(out_dir, "loss.csv"), history)
    figures.render_loss_curve(history, os.path.join(out_dir, "loss_curve.png"))
    write_manifest(
        os.path.join(out_dir, "run_manifest.txt"), "train", config.to_text(),
        config.seed, input_hashes={"corpus": corpus.describe()},
        started=started, finished=utc_now(),
    )
    return TrainResult(checkpoint_path, tuple(history), out_dir, net)


def _write_loss_series(path: str, history) -> None:
    lines = ["iteration,loss,anneal_weight,learning_rate"]
    for t, loss, aw, lr in history:
        lines.append(f"{t},{loss!r},{aw!r},{lr!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def data_manifest_text(config: TrainConfig) -> str:
    """The data-affecting slice of a run config; identical across ablation ids."""
    entries = {
        "seed": config.seed,
        "iterations": config.iterations,
        "batch_size": config.batch_size,
        "frame_size": config.frame_size,
        "n_frames": config.net.n_frames,
        "offset_mode": config.offset_mode,
        "cached_bursts": config.cached_bursts,
        "chart_count": config.chart_count,
        "corpus_dir": config.corpus_dir or "(charts)",
        "train_preset": (
            f"{config.train_preset.sigma_r!r},{config.train_preset.sigma_s!r}"
            if config.train_preset else "random"
        ),
    }
    return serialize_config(entries)


def run_ablation(model_ids, config: TrainConfig, out_dir: str,
                 val_count: int = 100, val_preset: Optional[GainPreset] = None,
                 domain: str = "gamma", progress=None) -> EvalReport:
    """Train each model variant under identical seeds/data, score on one
    frozen validation set, and emit a combined ablation table.

    Model rows are labeled "Model <id>"; the validation set is synthesized
    once from a seed derived from the master seed and shared by every row.
    """
    model_ids = list(model_ids)
    if not model_ids:
        raise ValueError("no model ids given")
    for mid in model_ids:
        build_ablation(mid)  # validates the id
    if val_preset is None:
        val_preset = GAIN_PRESETS[2]
    started = utc_now()
    os.makedirs(out_dir, exist_ok=True)
    corpus = open_corpus(config)
    val_master = int(np.random.SeedSequence((config.seed, _VAL_TAG)).generate_state(1)[0])
    val_dir = os.path.join(out_dir, "validation")
    write_dataset(val_dir, corpus, val_count, val_preset, val_master,
                  n_frames=config.net.n_frames, frame_size=config.frame_size,
                  offset_mode=config.offset_mode)
    data_manifest = data_manifest_text(config)
    reports = []
    for mid in model_ids:
        net_cfg = build_ablation(
            mid,
            n_frames=config.net.n_frames,
            kernel_size=config.net.kernel_size,
            encoder_widths=config.net.encoder_widths,
            num_scales=config.net.num_scales,
        )
        model_cfg = replace(config, net=net_cfg)
        model_dir = os.path.join(out_dir, f"model_{mid}")
        result = train(model_cfg, model_dir, label=f"Model {mid}", progress=progress)
        with open(os.path.join(model_dir, "data_manifest.txt"), "w",
                  encoding="utf-8") as fh:
            fh.write(data_manifest)
        reports.append(
            evaluate(result.checkpoint_path, val_dir, [val_preset],
                     domain=domain, model_label=f"Model {mid}")
        )
    combined = combine_reports(reports) if len(reports) > 1 else reports[0]
    with open(os.path.join(out_dir, "ablation.txt"), "w", encoding="utf-8") as fh:
        fh.write(to_text(combined))
    with open(os.path.join(out_dir, "ablation.csv"), "w", encoding="utf-8") as fh:
        fh.write(to_csv(combined))
    with open(os.path.join(out_dir, "ablation_per_image.csv"), "w",
              encoding="utf-8") as fh:
        fh.write(to_per_image_csv(combined))
    figures.render_report_chart(combined, os.path.join(out_dir, "ablation_chart.png"))
    write_manifest(
        os.path.join(out_dir, "run_manifest.txt"), "ablate", config.to_text(),
        config.seed, input_hashes={"corpus": corpus.describe()},
        started=started, finished=utc_now(),
    )
    return combined
