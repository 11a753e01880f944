"""Image quality metrics and the evaluation reporting harness.

psnr and ssim are pure functions on arrays. evaluate() drives a trained
checkpoint over a stored dataset at one or more gain presets and builds a
table shaped like the quantitative comparisons this models: one row per
model plus a noisy "Reference frame" baseline row, with a PSNR and an
SSIM column per gain.

Metric domain: scores default to gamma-corrected images (the denoiser's
display output); pass domain="linear" for linear-intensity scores. Both
domains clamp into [0, 1] display range before scoring.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .burstgen import (
    GAIN_PRESETS,
    GainPreset,
    add_noise,
    estimate_noise_map,
    list_samples,
    load_sample,
)
from .diffcore import read_checkpoint_meta
from .configfile import parse_config_text
from .network import Burst, KernelPredictionNet
from .objective import gamma_correct_array

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
METRIC_DOMAINS = ("gamma", "linear")
DEFAULT_EVAL_SEED = 7041


def psnr(a, b, peak: float = 1.0) -> float:
    """10 * log10(peak^2 / MSE); identical inputs give the inf sentinel."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    if peak <= 0:
        raise ValueError(f"peak must be positive, got {peak}")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized separable Gaussian weighting window."""
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma * sigma))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(a, b, peak: float = 1.0, window_size: int = SSIM_WINDOW,
         sigma: float = SSIM_SIGMA, k1: float = SSIM_K1, k2: float = SSIM_K2) -> float:
    """Mean single-scale structural similarity over valid window positions.

    Both images go through the same instruction sequence, so bitwise-equal
    inputs score exactly 1.0.
    """
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    if x.ndim != 2:
        raise ValueError(f"expected 2D images, got shape {x.shape}")
    if min(x.shape) < window_size:
        raise ValueError(
            f"images {x.shape} smaller than the {window_size}x{window_size} window"
        )
    if peak <= 0:
        raise ValueError(f"peak must be positive, got {peak}")
    win = gaussian_window(window_size, sigma)
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    wa = sliding_window_view(x, (window_size, window_size))
    wb = sliding_window_view(y, (window_size, window_size))
    axes = ([2, 3], [0, 1])
    mu_a = np.tensordot(wa, win, axes=axes)
    mu_b = np.tensordot(wb, win, axes=axes)
    var_a = np.tensordot(wa * wa, win, axes=axes) - mu_a * mu_a
    var_b = np.tensordot(wb * wb, win, axes=axes) - mu_b * mu_b
    cov = np.tensordot(wa * wb, win, axes=axes) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def metric_pair(prediction, truth, domain: str = "gamma") -> Tuple[float, float]:
    """(psnr, ssim) of a prediction against ground truth in display space.

    Both images are clamped to [0, 1]; in the default gamma domain they
    are then gamma-corrected before scoring.
    """
    if domain not in METRIC_DOMAINS:
        raise ValueError(f"domain must be one of {METRIC_DOMAINS}, got {domain!r}")
    pred = np.clip(np.asarray(prediction, dtype=np.float64), 0.0, 1.0)
    gt = np.clip(np.asarray(truth, dtype=np.float64), 0.0, 1.0)
    if domain == "gamma":
        pred = gamma_correct_array(pred)
        gt = gamma_correct_array(gt)
    return psnr(pred, gt), ssim(pred, gt)


def label_for_preset(preset: GainPreset) -> str:
    for gain, known in GAIN_PRESETS.items():
        if preset == known:
            return f"Gain {gain}"
    return f"Custom({preset.sigma_r:g},{preset.sigma_s:g})"


@dataclass(frozen=True)
class EvalCell:
    """Per-image scores and their mean for one (row, gain) slot."""

    psnr_values: tuple
    ssim_values: tuple

    def __post_init__(self):
        if len(self.psnr_values) != len(self.ssim_values) or not self.psnr_values:
            raise ValueError("need matching, non-empty psnr/ssim value lists")
        for s in self.ssim_values:
            if not -1.0 - 1e-9 <= s <= 1.0 + 1e-9:
                raise ValueError(f"ssim {s} outside [-1, 1]")

    @property
    def psnr(self) -> float:
        return float(np.mean(self.psnr_values))

    @property
    def ssim(self) -> float:
        return float(np.mean(self.ssim_values))


@dataclass(frozen=True)
class EvalRow:
    name: str
    cells: tuple


@dataclass(frozen=True)
class EvalReport:
    """Table of PSNR/SSIM scores: rows are models, column pairs are gains."""

    model_label: str
    config_hash: str
    domain: str
    gain_labels: tuple
    presets: tuple
    rows: tuple

    def row(self, name: str) -> EvalRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(f"no row named {name!r}")


REFERENCE_ROW = "Reference frame"


def _frames_at_preset(sample, preset: GainPreset, eval_seed: int,
                      preset_index: int, sample_index: int):
    # the dataset's own preset reuses the stored noisy frames byte for byte;
    # other presets re-noise the stored clean frames deterministically
    if preset == sample.preset:
        return sample.frames, sample.noise_map
    seq = np.random.SeedSequence((eval_seed, preset_index, sample_index))
    frames = add_noise(sample.clean_frames, preset, np.random.default_rng(seq))
    return frames, estimate_noise_map(frames[0], preset)


def config_hash_of(config_text: str) -> str:
    return hashlib.sha256(config_text.encode("utf-8")).hexdigest()[:12]


def evaluate(model_ckpt: str, dataset_dir: str, presets, domain: str = "gamma",
             eval_seed: int = DEFAULT_EVAL_SEED, include_reference: bool = True,
             model_label=None) -> EvalReport:
    """Score a checkpoint over a stored dataset at each gain preset.

    Every sample contributes one per-image PSNR/SSIM pair per gain; the
    noisy reference frame is scored the same way for the baseline row.
    Re-noising uses seeds derived from (eval_seed, gain, sample), so the
    report is a pure function of its arguments.
    """
    if domain not in METRIC_DOMAINS:
        raise ValueError(f"domain must be one of {METRIC_DOMAINS}, got {domain!r}")
    presets = list(presets)
    if not presets:
        raise ValueError("need at least one gain preset")
    net = KernelPredictionNet.load(model_ckpt)
    meta = parse_config_text(read_checkpoint_meta(model_ckpt))
    label = model_label or meta.get("label") or "model"
    samples = [load_sample(d) for d in list_samples(dataset_dir)]
    if not samples:
        raise ValueError(f"{dataset_dir}: dataset has no samples to evaluate")
    for sample in samples:
        if sample.n_frames != net.config.n_frames:
            raise ValueError(
                f"dataset bursts have {sample.n_frames} frames but the "
                f"model expects {net.config.n_frames}"
            )
    ref_cells = []
    model_cells = []
    for pi, preset in enumerate(presets):
        ref_p, ref_s, mod_p, mod_s = [], [], [], []
        for si, sample in enumerate(samples):
            frames, noise_map = _frames_at_preset(sample, preset, eval_seed, pi, si)
            p, s = metric_pair(frames[0], sample.ground_truth, domain)
            ref_p.append(p)
            ref_s.append(s)
            burst = Burst.from_arrays(frames, dtype=net.dtype)
            denoised, _ = net.forward(burst, noise_map.astype(net.dtype))
            p, s = metric_pair(denoised.data, sample.ground_truth, domain)
            mod_p.append(p)
            mod_s.append(s)
        ref_cells.append(EvalCell(tuple(ref_p), tuple(ref_s)))
        model_cells.append(EvalCell(tuple(mod_p), tuple(mod_s)))
    rows = []
    if include_reference:
        rows.append(EvalRow(REFERENCE_ROW, tuple(ref_cells)))
    rows.append(EvalRow(label, tuple(model_cells)))
    return EvalReport(
        model_label=label,
        config_hash=config_hash_of(net.config.to_text()),
        domain=domain,
        gain_labels=tuple(label_for_preset(p) for p in presets),
        presets=tuple(presets),
        rows=tuple(rows),
    )


def combine_reports(reports) -> EvalReport:
    """Merge single-model reports over the same dataset into one table.

    Keeps one reference row (they must agree across reports) and stacks
    the model rows in the order given.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to combine")
    first = reports[0]
    rows = []
    reference = None
    for rep in reports:
        if rep.domain != first.domain or rep.gain_labels != first.gain_labels:
            raise ValueError("reports disagree on domain or gain columns")
        for row in rep.rows:
            if row.name == REFERENCE_ROW:
                if reference is None:
                    reference = row
                    rows.insert(0, row)
                else:
                    for mine, theirs in zip(reference.cells, row.cells):
                        if mine.psnr_values != theirs.psnr_values:
                            raise ValueError(
                                "reference rows disagree; reports were not "
                                "built over the same dataset and seed"
                            )
            else:
                rows.append(row)
    return EvalReport(
        model_label="combined",
        config_hash="-",
        domain=first.domain,
        gain_labels=first.gain_labels,
        presets=first.presets,
        rows=tuple(rows),
    )


def _fmt_psnr(value: float) -> str:
    return "   inf" if np.isinf(value) else f"{value:6.2f}"


def to_text(report: EvalReport) -> str:
    """Aligned table: one row per model, PSNR and SSIM columns per gain."""
    name_w = max(len(r.name) for r in report.rows)
    name_w = max(name_w, len("(model)"))
    lines = [
        f"domain: {report.domain}    model: {report.model_label}    "
        f"config: {report.config_hash}",
        "",
    ]
    head = " " * name_w
    sub = " " * name_w
    for label in report.gain_labels:
        head += f" | {label:^14}"
        sub += f" | {'PSNR':>6} {'SSIM':>7}"
    lines.append(head)
    lines.append(sub)
    lines.append("-" * len(sub))
    for row in report.rows:
        line = f"{row.name:<{name_w}}"
        for cell in row.cells:
            line += f" | {_fmt_psnr(cell.psnr)} {cell.ssim:7.4f}"
        lines.append(line)
    return "\n".join(lines) + "\n"


def to_csv(report: EvalReport) -> str:
    """Long-form aggregate table: one line per (model, gain)."""
    lines = ["model,domain,gain,psnr,ssim"]
    for row in report.rows:
        for label, cell in zip(report.gain_labels, row.cells):
            lines.append(f"{row.name},{report.domain},{label},"
                         f"{cell.psnr!r},{cell.ssim!r}")
    return "\n".join(lines) + "\n"


def to_per_image_csv(report: EvalReport) -> str:
    lines = ["model,domain,gain,image,psnr,ssim"]
    for row in report.rows:
        for label, cell in zip(report.gain_labels, row.cells):
            for i, (p, s) in enumerate(zip(cell.psnr_values, cell.ssim_values)):
                lines.append(f"{row.name},{report.domain},{label},{i},{p!r},{s!r}")
    return "\n".join(lines) + "\n"
