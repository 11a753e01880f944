"""Synthetic burst generation.

A burst is manufactured from one high-resolution source image: crop an
oversized patch, translate neighbor frames by integer offsets to mimic
hand shake, 4x box-downsample everything, then inject heteroscedastic
read/shot noise and estimate the reference frame's noise map. Every step
is a pure function of (source, seed, preset, N), so samples regenerate
bit-identically and bursts can be produced in parallel under a
seed-per-sample discipline.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import images
from .configfile import parse_config, serialize_config

POISSON_LAMBDA = 1.5
LARGE_OFFSET_BOUND = 64
SMALL_OFFSET_BOUND = 8
DOWNSAMPLE_FACTOR = 4
DEFAULT_FRAME_SIZE = 128
OFFSET_MODES = ("frame", "burst")

CHART_SIZE_MIN = 640
DEFAULT_CHART_SIZE = 704
_CHART_SEED_TAG = 0x42464743

SAMPLE_FORMAT = "burst-sample-v1"
DATASET_FORMAT = "burst-dataset-v1"
_SAMPLE_ARRAYS = ("ground_truth", "frames", "clean_frames", "noise_map")


@dataclass(frozen=True)
class GainPreset:
    """Read/shot noise level: variance at intensity y is sigma_r^2 + sigma_s*y."""

    sigma_r: float
    sigma_s: float

    def __post_init__(self):
        if not (self.sigma_r > 0.0 and self.sigma_s > 0.0):
            raise ValueError(
                f"noise parameters must be positive, got "
                f"sigma_r={self.sigma_r}, sigma_s={self.sigma_s}"
            )


GAIN_PRESETS = {
    1: GainPreset(5e-3, 1e-3),
    2: GainPreset(2e-2, 4.3e-3),
    3: GainPreset(5e-2, 1e-2),
    4: GainPreset(8e-2, 2.3e-2),
}

TRAIN_SIGMA_R_RANGE = (1e-3, 10.0 ** -1.5)
TRAIN_SIGMA_S_RANGE = (1e-4, 1e-2)


def sample_train_preset(rng: np.random.Generator) -> GainPreset:
    """Draw a training noise level uniformly from the declared ranges."""
    sigma_r = float(rng.uniform(*TRAIN_SIGMA_R_RANGE))
    sigma_s = float(rng.uniform(*TRAIN_SIGMA_S_RANGE))
    return GainPreset(sigma_r, sigma_s)


@dataclass(frozen=True)
class OffsetSpec:
    """Integer (dx, dy) translation per frame, with the range each came from.

    Frame 0 is the reference and is pinned to (0, 0). large_flags marks
    frames whose offset was drawn from the wide range; poisson_count is
    the burst's Poisson draw that set the wide-range probability.
    """

    offsets: tuple
    large_flags: tuple
    poisson_count: int

    def __post_init__(self):
        offs = tuple((int(dx), int(dy)) for dx, dy in self.offsets)
        flags = tuple(bool(f) for f in self.large_flags)
        object.__setattr__(self, "offsets", offs)
        object.__setattr__(self, "large_flags", flags)
        if len(offs) < 2:
            raise ValueError(f"need at least 2 frames, got {len(offs)}")
        if len(flags) != len(offs):
            raise ValueError("one large flag per frame required")
        if offs[0] != (0, 0) or flags[0]:
            raise ValueError("reference frame must have zero offset")
        if self.poisson_count < 0:
            raise ValueError("poisson_count must be nonnegative")
        for i in range(1, len(offs)):
            bound = LARGE_OFFSET_BOUND if flags[i] else SMALL_OFFSET_BOUND
            dx, dy = offs[i]
            if abs(dx) > bound or abs(dy) > bound:
                raise ValueError(
                    f"frame {i} offset {offs[i]} outside +-{bound}"
                )

    @property
    def n_frames(self) -> int:
        return len(self.offsets)


def sample_offsets(n_frames: int, rng: np.random.Generator,
                   mode: str = "frame") -> OffsetSpec:
    """Draw per-frame misalignment offsets for one burst.

    One Poisson(1.5) draw n sets the burst's wide-range probability
    min(n, N)/N. In "frame" mode each neighbor then flips its own coin
    between the [-64, 64] and [-8, 8] integer ranges; in "burst" mode a
    single coin covers every neighbor. The reference frame stays at
    (0, 0) either way.
    """
    if n_frames < 2:
        raise ValueError(f"a burst needs at least 2 frames, got {n_frames}")
    if mode not in OFFSET_MODES:
        raise ValueError(f"mode must be one of {OFFSET_MODES}, got {mode!r}")
    count = int(rng.poisson(POISSON_LAMBDA))
    p_large = min(count, n_frames) / n_frames
    offsets = [(0, 0)]
    flags = [False]
    shared_large = None
    if mode == "burst":
        shared_large = bool(rng.random() < p_large)
    for _ in range(n_frames - 1):
        if shared_large is None:
            large = bool(rng.random() < p_large)
        else:
            large = shared_large
        bound = LARGE_OFFSET_BOUND if large else SMALL_OFFSET_BOUND
        pair = rng.integers(-bound, bound + 1, size=2)
        offsets.append((int(pair[0]), int(pair[1])))
        flags.append(large)
    return OffsetSpec(tuple(offsets), tuple(flags), count)


def shift_patch(source: np.ndarray, offset,
                margin: int = LARGE_OFFSET_BOUND) -> np.ndarray:
    """Translate by cropping a displaced window; no interpolation.

    offset = (dx, dy) moves the crop window dy rows down and dx columns
    right inside `source`, whose border of `margin` pixels on every side
    is the travel budget. Output extents shrink by 2*margin.
    """
    src = np.asarray(source)
    if src.ndim != 2:
        raise ValueError(f"expected a 2D patch, got shape {src.shape}")
    dx, dy = int(offset[0]), int(offset[1])
    if abs(dx) > margin or abs(dy) > margin:
        raise ValueError(f"offset ({dx}, {dy}) exceeds margin {margin}")
    h, w = src.shape
    if h <= 2 * margin or w <= 2 * margin:
        raise ValueError(
            f"source {src.shape} too small for margin {margin}"
        )
    return src[margin + dy: h - margin + dy,
               margin + dx: w - margin + dx].copy()


def box_downsample4(image: np.ndarray) -> np.ndarray:
    """Mean over non-overlapping 4x4 blocks; extents must divide by 4."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError(f"expected a 2D image, got shape {img.shape}")
    h, w = img.shape
    f = DOWNSAMPLE_FACTOR
    if h % f or w % f:
        raise ValueError(f"extents {img.shape} not divisible by {f}")
    return img.reshape(h // f, f, w // f, f).mean(axis=(1, 3))


def add_noise(clean: np.ndarray, preset: GainPreset,
              rng: np.random.Generator) -> np.ndarray:
    """Gaussian noise with per-pixel variance sigma_r^2 + sigma_s * y.

    The output is intentionally left unclamped; negative excursions are
    part of the sensor model and the noise map estimator handles them.
    """
    arr = np.asarray(clean, dtype=np.float64)
    if arr.size and arr.min() < 0.0:
        raise ValueError("clean intensities must be nonnegative")
    std = np.sqrt(preset.sigma_r ** 2 + preset.sigma_s * arr)
    return arr + rng.standard_normal(arr.shape) * std


def estimate_noise_map(reference: np.ndarray, preset: GainPreset) -> np.ndarray:
    """Per-pixel noise std sqrt(sigma_r^2 + sigma_s * max(x, 0))."""
    arr = np.asarray(reference, dtype=np.float64)
    return np.sqrt(preset.sigma_r ** 2 + preset.sigma_s * np.maximum(arr, 0.0))


@dataclass(frozen=True)
class SynthSample:
    """One synthetic burst plus everything needed to regenerate or re-noise it.

    frames holds the unclamped noisy burst; clean_frames keeps the
    pre-noise frames so evaluation can re-noise the same content at other
    gain presets without touching the source corpus.
    """

    ground_truth: np.ndarray
    frames: np.ndarray
    clean_frames: np.ndarray
    noise_map: np.ndarray
    preset: GainPreset
    offsets: OffsetSpec
    seed: int

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def extents(self):
        return self.ground_truth.shape


def synthesize_burst(source_image: np.ndarray, n_frames: int,
                     preset: GainPreset, seed: int,
                     frame_size: int = DEFAULT_FRAME_SIZE,
                     offset_mode: str = "frame") -> SynthSample:
    """Build one burst from a high-resolution grayscale source.

    Crops a (4*frame_size + 128)-sided window at a random anchor, shifts
    each neighbor frame inside it, box-downsamples 4x, then adds noise.
    Ground truth is the downsampled zero-offset patch. The source must be
    at least 4*frame_size + 128 pixels per side.
    """
    src = np.asarray(source_image, dtype=np.float64)
    if src.ndim != 2:
        raise ValueError(f"expected a 2D source image, got shape {src.shape}")
    if frame_size < 1:
        raise ValueError(f"frame_size must be positive, got {frame_size}")
    patch = frame_size * DOWNSAMPLE_FACTOR
    margin = LARGE_OFFSET_BOUND
    need = patch + 2 * margin
    h, w = src.shape
    if h < need or w < need:
        raise ValueError(
            f"source {src.shape} smaller than required {need}x{need} "
            f"(patch {patch} plus {margin}px travel margin per side)"
        )
    rng = np.random.default_rng(seed)
    anchor_y = int(rng.integers(0, h - need + 1))
    anchor_x = int(rng.integers(0, w - need + 1))
    region = src[anchor_y: anchor_y + need, anchor_x: anchor_x + need]
    offsets = sample_offsets(n_frames, rng, mode=offset_mode)
    clean = np.stack([
        box_downsample4(shift_patch(region, off, margin))
        for off in offsets.offsets
    ])
    ground_truth = clean[0].copy()
    frames = add_noise(clean, preset, rng)
    noise_map = estimate_noise_map(frames[0], preset)
    return SynthSample(ground_truth, frames, clean, noise_map,
                       preset, offsets, int(seed))


def chart_image(index: int, size: int = DEFAULT_CHART_SIZE) -> np.ndarray:
    """Procedural grayscale test chart in [0, 1], deterministic in (index, size).

    Six rotating families (ramps with disks, checkers, zone plates, smooth
    blobs, step wedges, gratings) give the synthetic pipeline varied edges,
    flats, and textures without any image corpus on disk.
    """
    if size < CHART_SIZE_MIN:
        raise ValueError(f"charts must be at least {CHART_SIZE_MIN}px, got {size}")
    rng = np.random.default_rng(np.random.SeedSequence((_CHART_SEED_TAG, index)))
    t = np.linspace(0.0, 1.0, size)
    yy, xx = np.meshgrid(t, t, indexing="ij")
    kind = index % 6
    if kind == 0:
        img = 0.15 + 0.7 * (0.6 * xx + 0.4 * yy)
        for _ in range(6):
            cy, cx = rng.uniform(0.1, 0.9, size=2)
            radius = rng.uniform(0.03, 0.12)
            level = rng.uniform(0.0, 1.0)
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < radius ** 2
            img = np.where(mask, level, img)
    elif kind == 1:
        freq = int(rng.integers(3, 9))
        checker = np.sign(np.sin(2 * np.pi * freq * xx)
                          * np.sin(2 * np.pi * freq * yy))
        img = 0.5 + 0.38 * checker + 0.1 * xx
    elif kind == 2:
        k = rng.uniform(40.0, 90.0)
        r2 = (xx - 0.5) ** 2 + (yy - 0.5) ** 2
        img = 0.5 + 0.45 * np.cos(2.0 * np.pi * k * r2)
    elif kind == 3:
        img = np.full_like(xx, 0.5)
        for _ in range(10):
            cy, cx = rng.uniform(0.0, 1.0, size=2)
            sigma = rng.uniform(0.02, 0.2)
            amp = rng.uniform(-0.45, 0.45)
            img = img + amp * np.exp(
                -((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma ** 2))
    elif kind == 4:
        bands = int(rng.integers(6, 14))
        wedge = np.floor(yy * bands) / (bands - 1)
        stripes = np.sin(2 * np.pi * int(rng.integers(2, 6)) * xx)
        img = 0.1 + 0.75 * wedge + 0.07 * stripes
    else:
        freq = rng.uniform(4.0, 12.0)
        grating = np.sin(np.pi * freq * (xx + yy))
        cy, cx = rng.uniform(0.25, 0.75, size=2)
        disk = ((yy - cy) ** 2 + (xx - cx) ** 2 < 0.04).astype(np.float64)
        img = 0.4 + 0.25 * grating + 0.3 * disk * (xx - 0.5)
    return np.clip(img, 0.0, 1.0)


class ChartCorpus:
    """Fixed-length corpus of procedural charts, generated lazily and cached."""

    def __init__(self, count: int = 16, size: int = DEFAULT_CHART_SIZE):
        if count < 1:
            raise ValueError(f"corpus needs at least one chart, got {count}")
        if size < CHART_SIZE_MIN:
            raise ValueError(f"charts must be at least {CHART_SIZE_MIN}px, got {size}")
        self.count = count
        self.size = size
        self._cache = {}

    def __len__(self) -> int:
        return self.count

    def __getitem__(self, index: int) -> np.ndarray:
        if not 0 <= index < self.count:
            raise IndexError(f"chart index {index} out of range [0, {self.count})")
        if index not in self._cache:
            self._cache[index] = chart_image(index, self.size)
        return self._cache[index]

    def describe(self) -> str:
        return f"charts:{self.count}@{self.size}"


class DirectoryCorpus:
    """Corpus backed by lossless raster files in a directory, read as grayscale."""

    def __init__(self, directory: str):
        self.directory = directory
        self.paths = images.list_rasters(directory)
        if not self.paths:
            raise ValueError(f"no raster images found in {directory}")

    def __len__(self) -> int:
        return len(self.paths)

    def __getitem__(self, index: int) -> np.ndarray:
        return images.to_grayscale(images.read_image(self.paths[index]))

    def describe(self) -> str:
        return f"dir:{os.path.basename(os.path.abspath(self.directory))}:{len(self.paths)}"


def _format_offsets(spec: OffsetSpec) -> str:
    return ";".join(f"{dx},{dy}" for dx, dy in spec.offsets)


def _parse_offsets(text: str, flags_text: str, count: int) -> OffsetSpec:
    pairs = []
    for chunk in text.split(";"):
        dx, dy = chunk.split(",")
        pairs.append((int(dx), int(dy)))
    flags = tuple(item == "1" for item in flags_text.split(";"))
    return OffsetSpec(tuple(pairs), flags, count)


def save_sample(directory: str, sample: SynthSample) -> None:
    """Write a sample bundle: raw little-endian float32 arrays + manifest.txt."""
    os.makedirs(directory, exist_ok=True)
    n, h, w = sample.frames.shape
    for name in _SAMPLE_ARRAYS:
        arr = np.ascontiguousarray(getattr(sample, name), dtype="<f4")
        with open(os.path.join(directory, name + ".raw"), "wb") as fh:
            fh.write(arr.tobytes())
    manifest = {
        "format": SAMPLE_FORMAT,
        "seed": str(sample.seed),
        "sigma_r": repr(sample.preset.sigma_r),
        "sigma_s": repr(sample.preset.sigma_s),
        "n_frames": str(n),
        "height": str(h),
        "width": str(w),
        "offsets": _format_offsets(sample.offsets),
        "large_flags": ";".join(
            "1" if f else "0" for f in sample.offsets.large_flags),
        "poisson_count": str(sample.offsets.poisson_count),
    }
    with open(os.path.join(directory, "manifest.txt"), "w", encoding="utf-8") as fh:
        fh.write(serialize_config(manifest))


def _read_raw(path: str, shape) -> np.ndarray:
    expected = int(np.prod(shape)) * 4
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) != expected:
        raise ValueError(
            f"{path}: expected {expected} bytes for shape {tuple(shape)}, "
            f"got {len(blob)}"
        )
    return np.frombuffer(blob, dtype="<f4").reshape(shape).copy()


def load_sample(directory: str) -> SynthSample:
    """Read back a bundle written by save_sample (arrays come back float32)."""
    manifest = parse_config(os.path.join(directory, "manifest.txt"))
    if manifest.get("format") != SAMPLE_FORMAT:
        raise ValueError(
            f"{directory}: not a {SAMPLE_FORMAT} bundle "
            f"(format={manifest.get('format')!r})"
        )
    n = int(manifest["n_frames"])
    h = int(manifest["height"])
    w = int(manifest["width"])
    preset = GainPreset(float(manifest["sigma_r"]), float(manifest["sigma_s"]))
    offsets = _parse_offsets(manifest["offsets"], manifest["large_flags"],
                             int(manifest["poisson_count"]))
    if offsets.n_frames != n:
        raise ValueError(f"{directory}: offsets cover {offsets.n_frames} "
                         f"frames but manifest declares {n}")
    arrays = {
        "ground_truth": _read_raw(os.path.join(directory, "ground_truth.raw"), (h, w)),
        "frames": _read_raw(os.path.join(directory, "frames.raw"), (n, h, w)),
        "clean_frames": _read_raw(os.path.join(directory, "clean_frames.raw"), (n, h, w)),
        "noise_map": _read_raw(os.path.join(directory, "noise_map.raw"), (h, w)),
    }
    return SynthSample(arrays["ground_truth"], arrays["frames"],
                       arrays["clean_frames"], arrays["noise_map"],
                       preset, offsets, int(manifest["seed"]))


def sample_seeds(master_seed: int, count: int) -> list:
    """Deterministic per-sample seed list derived from one master seed."""
    if count == 0:
        return []
    state = np.random.SeedSequence(master_seed).generate_state(count)
    return [int(v) for v in state]


def write_dataset(directory: str, corpus, count: int, preset: GainPreset,
                  master_seed: int, n_frames: int = 8,
                  frame_size: int = DEFAULT_FRAME_SIZE,
                  offset_mode: str = "frame") -> list:
    """Materialize `count` bursts as sample_NNNN bundles plus a dataset manifest.

    Sources rotate through the corpus; per-sample seeds derive from the
    master seed, so the whole dataset is reproducible byte for byte.
    Returns the sample directory paths.
    """
    if count < 0:
        raise ValueError(f"count must be nonnegative, got {count}")
    os.makedirs(directory, exist_ok=True)
    seeds = sample_seeds(master_seed, count)
    sample_dirs = []
    for i in range(count):
        source = corpus[i % len(corpus)]
        sample = synthesize_burst(source, n_frames, preset, seeds[i],
                                  frame_size=frame_size,
                                  offset_mode=offset_mode)
        sub = os.path.join(directory, f"sample_{i:04d}")
        save_sample(sub, sample)
        sample_dirs.append(sub)
    manifest = {
        "format": DATASET_FORMAT,
        "count": str(count),
        "n_frames": str(n_frames),
        "frame_size": str(frame_size),
        "sigma_r": repr(preset.sigma_r),
        "sigma_s": repr(preset.sigma_s),
        "master_seed": str(master_seed),
        "offset_mode": offset_mode,
        "corpus": corpus.describe() if hasattr(corpus, "describe") else "custom",
    }
    with open(os.path.join(directory, "manifest.txt"), "w", encoding="utf-8") as fh:
        fh.write(serialize_config(manifest))
    return sample_dirs


def list_samples(directory: str) -> list:
    """Sample bundle directories of a dataset, in index order."""
    manifest_path = os.path.join(directory, "manifest.txt")
    manifest = parse_config(manifest_path)
    if manifest.get("format") != DATASET_FORMAT:
        raise ValueError(
            f"{directory}: not a {DATASET_FORMAT} dataset "
            f"(format={manifest.get('format')!r})"
        )
    count = int(manifest["count"])
    dirs = [os.path.join(directory, f"sample_{i:04d}") for i in range(count)]
    for sub in dirs:
        if not os.path.isdir(sub):
            raise ValueError(f"dataset manifest lists {count} samples "
                             f"but {sub} is missing")
    return dirs
