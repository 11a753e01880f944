"""Command-line surface: synthesize data, train, denoise, evaluate, ablate.

Exit codes are a stable scripting contract: 0 success, 2 usage or
configuration error, 3 runtime or data error. Every artifact-producing
command writes a run_manifest.txt next to its outputs with the resolved
configuration, seed, timestamps, code version, and input hashes.

The master seed resolves in priority order: --seed flag, then the
BURSTFORGE_SEED environment variable, then a seed entry in the config
file, then the built-in default.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import images
from .burstgen import (
    GAIN_PRESETS,
    ChartCorpus,
    DirectoryCorpus,
    GainPreset,
    estimate_noise_map,
    load_sample,
    write_dataset,
)
from .configfile import parse_config, parse_config_text
from .manifest import file_sha256, utc_now, write_manifest
from .metrics import evaluate, to_csv, to_per_image_csv, to_text
from .network import Burst, KernelPredictionNet, build_ablation
from .objective import gamma_correct_array
from .trainer import TrainConfig, desk_profile, paper_profile, run_ablation, train
from . import figures

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3

ENV_SEED = "BURSTFORGE_SEED"


class UsageError(Exception):
    """Bad flags or configuration; exits with code 2."""


def resolve_seed(flag_value, config_value=None, default: int = 0) -> int:
    if flag_value is not None:
        return int(flag_value)
    env = os.environ.get(ENV_SEED)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"{ENV_SEED} must be an integer, got {env!r}")
    if config_value is not None:
        return int(config_value)
    return default


def parse_gain(text: str) -> GainPreset:
    """'1'..'4' for the table presets, or 'sigma_r,sigma_s' for custom."""
    text = text.strip()
    if "," in text:
        parts = text.split(",")
        if len(parts) != 2:
            raise UsageError(f"custom gain needs sigma_r,sigma_s, got {text!r}")
        try:
            return GainPreset(float(parts[0]), float(parts[1]))
        except ValueError as err:
            raise UsageError(f"invalid custom gain {text!r}: {err}")
    if text in {"1", "2", "3", "4"}:
        return GAIN_PRESETS[int(text)]
    raise UsageError(f"gain must be 1..4 or sigma_r,sigma_s, got {text!r}")


def _open_corpus(args):
    if getattr(args, "corpus", None):
        return DirectoryCorpus(args.corpus)
    return ChartCorpus(count=args.chart_count)


# -- synth -----------------------------------------------------------------

def cmd_synth(args) -> int:
    started = utc_now()
    preset = parse_gain(args.gain)
    seed = resolve_seed(args.seed)
    corpus = _open_corpus(args)
    write_dataset(args.out, corpus, args.count, preset, seed,
                  n_frames=args.n, frame_size=args.frame_size,
                  offset_mode=args.offset_mode)
    config = {
        "count": args.count, "n_frames": args.n, "frame_size": args.frame_size,
        "sigma_r": repr(preset.sigma_r), "sigma_s": repr(preset.sigma_s),
        "offset_mode": args.offset_mode, "corpus": corpus.describe(),
    }
    _write_run_manifest(args.out, "synth", config, seed,
                        {"corpus": corpus.describe()}, started)
    print(f"wrote {args.count} bursts to {args.out}")
    return EXIT_OK


# -- train / ablate --------------------------------------------------------

def _resolve_train_config(args) -> TrainConfig:
    profile = paper_profile() if args.profile == "paper" else desk_profile()
    entries = dict(parse_config_text(profile.to_text()))
    try:
        if args.config:
            entries.update(parse_config(args.config))
        config = TrainConfig.from_mapping(entries)
    except (ValueError, OSError) as err:
        raise UsageError(str(err))
    seed = resolve_seed(args.seed, config_value=entries.get("seed"),
                        default=config.seed)
    config = _replace(config, seed=seed)
    if getattr(args, "model", None) is not None:
        net = build_ablation(
            args.model,
            n_frames=config.net.n_frames,
            kernel_size=config.net.kernel_size,
            encoder_widths=config.net.encoder_widths,
            num_scales=config.net.num_scales,
        )
        config = _replace(config, net=net)
    return config


def _replace(config, **kw):
    from dataclasses import replace

    return replace(config, **kw)


def cmd_train(args) -> int:
    config = _resolve_train_config(args)
    if args.print_config:
        print(config.to_text(), end="")
        return EXIT_OK
    label = f"Model {args.model}" if args.model is not None else "model"
    result = train(config, args.out, label=label, progress=print,
                   progress_every=args.progress_every)
    print(f"final checkpoint: {result.checkpoint_path}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    config = _resolve_train_config(args)
    try:
        model_ids = [int(x) for x in args.models.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"--models must be a comma list of ids, got {args.models!r}")
    if not model_ids:
        raise UsageError("--models must name at least one model id")
    for mid in model_ids:
        if mid not in range(1, 7):
            raise UsageError(f"model ids must be in 1..6, got {mid}")
    report = run_ablation(model_ids, config, args.out, val_count=args.val_count,
                          val_preset=parse_gain(args.val_gain),
                          domain=args.domain, progress=print)
    print(to_text(report), end="")
    return EXIT_OK


# -- denoise ---------------------------------------------------------------

def _pad_to_multiple(arr: np.ndarray, factor: int):
    h, w = arr.shape
    ph = (-h) % factor
    pw = (-w) % factor
    if ph or pw:
        arr = np.pad(arr, ((0, ph), (0, pw)), mode="edge")
    return arr, (h, w)


def _denoise_channel(net: KernelPredictionNet, frames: np.ndarray,
                     noise_map: np.ndarray) -> np.ndarray:
    """One network invocation on [N,H,W] frames; pads to the U-Net grid."""
    factor = 1 << net.config.num_scales
    h, w = frames.shape[1], frames.shape[2]
    padded = []
    for i in range(frames.shape[0]):
        arr, _ = _pad_to_multiple(frames[i], factor)
        padded.append(arr)
    nmap, _ = _pad_to_multiple(noise_map, factor)
    burst = Burst.from_arrays(np.stack(padded), dtype=net.dtype)
    denoised, _ = net.forward(burst, nmap.astype(net.dtype))
    return denoised.data[:h, :w]


def _load_frame_files(paths):
    frames = []
    for path in paths:
        frames.append(images.read_image(path))
    shapes = {f.shape for f in frames}
    if len(shapes) > 1:
        raise ValueError(f"burst frames disagree on shape: {sorted(shapes)}")
    return frames


def cmd_denoise(args) -> int:
    started = utc_now()
    net = KernelPredictionNet.load(args.checkpoint)
    expected = net.config.n_frames
    hashes = {"checkpoint": file_sha256(args.checkpoint)}

    if args.bundle:
        sample = load_sample(args.bundle)
        if sample.n_frames != expected:
            raise UsageError(
                f"burst has {sample.n_frames} frames but the checkpoint "
                f"expects {expected}"
            )
        result = _denoise_channel(net, sample.frames, sample.noise_map)
        hashes["bundle"] = file_sha256(os.path.join(args.bundle, "frames.raw"))
        source_desc = {"bundle": args.bundle}
    else:
        if len(args.frames) != expected:
            raise UsageError(
                f"expected {expected} burst frames, got {len(args.frames)}"
            )
        frames = _load_frame_files(args.frames)
        for i, path in enumerate(args.frames):
            hashes[f"frame{i}"] = file_sha256(path)
        preset = parse_gain(args.gain)
        color = frames[0].ndim == 3 and args.color_mode == "per-channel"
        if frames[0].ndim == 3 and not color:
            frames = [images.to_grayscale(f) for f in frames]
        if color:
            channels = []
            for c in range(3):
                stack = np.stack([f[:, :, c] for f in frames])
                noise_map = estimate_noise_map(stack[0], preset)
                channels.append(_denoise_channel(net, stack, noise_map))
            result = np.stack(channels, axis=2)
        else:
            stack = np.stack(frames)
            noise_map = estimate_noise_map(stack[0], preset)
            result = _denoise_channel(net, stack, noise_map)
        source_desc = {"gain": args.gain, "color_mode": args.color_mode,
                       "frames": len(args.frames)}

    out_image = gamma_correct_array(np.clip(result, 0.0, 1.0))
    images.write_image(args.out, out_image, bit_depth=16)
    config = {"checkpoint": args.checkpoint, "out": args.out}
    config.update({k: str(v) for k, v in source_desc.items()})
    _write_run_manifest(os.path.dirname(os.path.abspath(args.out)) or ".",
                        "denoise", config, 0, hashes, started)
    print(f"wrote {args.out}")
    return EXIT_OK


# -- eval ------------------------------------------------------------------

def cmd_eval(args) -> int:
    started = utc_now()
    presets = [parse_gain(g) for g in args.gains.split(",") if g.strip()]
    if not presets:
        raise UsageError(f"--gains must name at least one gain, got {args.gains!r}")
    report = evaluate(args.checkpoint, args.dataset, presets, domain=args.domain)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(to_text(report))
    with open(os.path.join(args.out, "report.csv"), "w", encoding="utf-8") as fh:
        fh.write(to_csv(report))
    with open(os.path.join(args.out, "report_per_image.csv"), "w",
              encoding="utf-8") as fh:
        fh.write(to_per_image_csv(report))
    figures.render_report_chart(report, os.path.join(args.out, "report_chart.png"))
    hashes = {
        "checkpoint": file_sha256(args.checkpoint),
        "dataset_manifest": file_sha256(os.path.join(args.dataset, "manifest.txt")),
    }
    config = {"checkpoint": args.checkpoint, "dataset": args.dataset,
              "gains": args.gains, "domain": args.domain}
    _write_run_manifest(args.out, "eval", config, 0, hashes, started)
    print(to_text(report), end="")
    return EXIT_OK


# -- plumbing --------------------------------------------------------------

def _write_run_manifest(out_dir, command, config_entries, seed, hashes, started):
    os.makedirs(out_dir, exist_ok=True)
    config_text = "\n".join(f"{k} = {v}" for k, v in sorted(
        (str(a), str(b)) for a, b in dict(config_entries).items()))
    write_manifest(os.path.join(out_dir, "run_manifest.txt"), command,
                   config_text + ("\n" if config_text else ""), seed,
                   input_hashes=hashes, started=started, finished=utc_now())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="burstforge",
        description="Burst image denoising: synthetic data, training, inference, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic burst dataset")
    p.add_argument("out", help="output dataset directory")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--corpus", help="directory of high-resolution source images")
    src.add_argument("--charts", action="store_true",
                     help="use procedural test charts (default)")
    p.add_argument("--gain", default="1",
                   help="1..4 or custom sigma_r,sigma_s (default 1)")
    p.add_argument("--n", type=int, default=8, help="frames per burst")
    p.add_argument("--count", type=int, default=16, help="number of bursts")
    p.add_argument("--frame-size", type=int, default=128)
    p.add_argument("--offset-mode", choices=["frame", "burst"], default="frame")
    p.add_argument("--chart-count", type=int, default=16)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a denoising model")
    p.add_argument("--config", help="key = value config file (include supported)")
    p.add_argument("--profile", choices=["desk", "paper"], default="desk")
    p.add_argument("--model", type=int, choices=range(1, 7), default=None,
                   help="ablation variant 1..6 (default: config's module flags)")
    p.add_argument("--out", default="train_out")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--progress-every", type=int, default=100)
    p.add_argument("--print-config", action="store_true",
                   help="print the resolved config and exit")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="train and compare model variants")
    p.add_argument("--models", default="1,2,3,4,5,6",
                   help="comma list of model ids (default all six)")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--profile", choices=["desk", "paper"], default="desk")
    p.add_argument("--out", default="ablation_out")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--val-count", type=int, default=100)
    p.add_argument("--val-gain", default="2")
    p.add_argument("--domain", choices=["gamma", "linear"], default="gamma")
    p.set_defaults(func=cmd_ablate, model=None)

    p = sub.add_parser("denoise", help="denoise one burst to a 16-bit image")
    p.add_argument("checkpoint")
    p.add_argument("--out", required=True, help="output image path (.png/.tif)")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--bundle", help="SynthSample bundle directory")
    src.add_argument("--frames", nargs="+", help="burst frame image files, reference first")
    p.add_argument("--gain", default="1",
                   help="noise level for raster frames: 1..4 or sigma_r,sigma_s")
    p.add_argument("--color-mode", choices=["per-channel", "gray"],
                   default="per-channel",
                   help="RGB handling: denoise channels independently or collapse to gray")
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("eval", help="score a checkpoint on a stored dataset")
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.add_argument("--gains", default="1,2,3,4")
    p.add_argument("--domain", choices=["gamma", "linear"], default="gamma")
    p.add_argument("--out", default="eval_out")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError, KeyError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
