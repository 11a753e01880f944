"""Training loop behavior at toy scale: determinism, overfit, abort paths."""

import os

import numpy as np
import pytest

from burstforge.burstgen import GAIN_PRESETS, GainPreset
from burstforge.diffcore import lr_schedule
from burstforge.metrics import REFERENCE_ROW
from burstforge.network import Burst, KernelPredictionNet, NetConfig
from burstforge.objective import anneal_weight
from burstforge.trainer import (
    TrainAbort,
    TrainConfig,
    build_cached_bursts,
    data_manifest_text,
    desk_profile,
    paper_profile,
    run_ablation,
    train,
)

TOY_NET = NetConfig(n_frames=2, kernel_size=3, encoder_widths=(4, 8), num_scales=2)


def toy_config(**overrides):
    params = dict(net=TOY_NET, iterations=2, batch_size=1, frame_size=32,
                  chart_count=2, checkpoint_every=10 ** 6, seed=5)
    params.update(overrides)
    return TrainConfig(**params)


class TestTrainConfig:
    def test_validation(self):
        with pytest.raises(ValueError, match="iterations"):
            toy_config(iterations=0)
        with pytest.raises(ValueError, match="divisible"):
            toy_config(frame_size=33)
        with pytest.raises(ValueError, match="offset_mode"):
            toy_config(offset_mode="sideways")
        with pytest.raises(ValueError, match="positive"):
            toy_config(initial_lr=0.0)
        with pytest.raises(ValueError, match="batch_size"):
            toy_config(batch_size=0)

    def test_text_round_trip(self):
        cfg = toy_config(corpus_dir="/data/pics", cached_bursts=3,
                         train_preset=GainPreset(0.02, 0.004))
        from burstforge.configfile import parse_config_text
        back = TrainConfig.from_mapping(parse_config_text(cfg.to_text()))
        assert back == cfg

    def test_paper_profile_values(self):
        cfg = paper_profile()
        assert cfg.iterations == 80000
        assert cfg.batch_size == 16
        assert cfg.net.n_frames == 8
        assert cfg.initial_lr == 1e-4
        assert cfg.frame_size == 128

    def test_desk_profile_values(self):
        cfg = desk_profile()
        assert cfg.net.n_frames == 4
        assert cfg.net.encoder_widths == (16, 32, 64, 128)
        assert cfg.iterations == 2000
        assert cfg.frame_size == 64


class TestTrain:
    def test_single_iteration_bit_identical(self, tmp_path):
        cfg = toy_config(iterations=1)
        a = train(cfg, str(tmp_path / "a"))
        b = train(cfg, str(tmp_path / "b"))
        assert a.history == b.history
        assert (tmp_path / "a" / "model.bfck").read_bytes() == \
               (tmp_path / "b" / "model.bfck").read_bytes()

    def test_overfit_cached_batch_decreases_smoothed_loss(self, tmp_path):
        cfg = toy_config(iterations=200, cached_bursts=1, initial_lr=1e-3,
                         train_preset=GAIN_PRESETS[2])
        result = train(cfg, str(tmp_path / "run"))
        losses = [row[1] for row in result.history]
        assert np.mean(losses[-50:]) < np.mean(losses[:50])

    def test_history_schedule_columns(self, tmp_path):
        cfg = toy_config(iterations=8, epoch_length=3)
        result = train(cfg, str(tmp_path / "run"))
        for t, _, aw, lr in result.history:
            assert aw == anneal_weight(t, cfg.loss)
            assert lr == lr_schedule(t // 3, cfg.initial_lr, cfg.lr_floor)

    def test_artifacts_written(self, tmp_path):
        out = tmp_path / "run"
        lines = []
        cfg = toy_config(iterations=10, cached_bursts=1)
        train(cfg, str(out), progress=lines.append, progress_every=5)
        assert (out / "model.bfck").exists()
        assert (out / "loss_curve.png").stat().st_size > 0
        csv = (out / "loss.csv").read_text().strip().split("\n")
        assert csv[0] == "iteration,loss,anneal_weight,learning_rate"
        assert len(csv) == 11
        manifest = (out / "run_manifest.txt").read_text()
        assert "command = train" in manifest
        assert "config.iterations = 10" in manifest
        assert "seed = 5" in manifest
        assert len(lines) == 3  # iterations 1, 5, 10
        for line in lines:
            assert "loss" in line and "anneal" in line and "lr" in line

    def test_checkpoint_cadence(self, tmp_path):
        out = tmp_path / "run"
        cfg = toy_config(iterations=6, checkpoint_every=2, cached_bursts=1)
        train(cfg, str(out))
        assert (out / "checkpoint_000002.bfck").exists()
        assert (out / "checkpoint_000004.bfck").exists()
        assert not (out / "checkpoint_000006.bfck").exists()  # final is model.bfck
        assert (out / "model.bfck").exists()

    def test_checkpoint_roundtrip_forward_bit_identical(self, tmp_path):
        cfg = toy_config(iterations=3, cached_bursts=1)
        result = train(cfg, str(tmp_path / "run"))
        loaded = KernelPredictionNet.load(result.checkpoint_path)
        rng = np.random.default_rng(0)
        frames = rng.uniform(0, 1, (2, 32, 32)).astype(np.float32)
        nmap = np.full((32, 32), 0.04, np.float32)
        mine, _ = result.net.forward(Burst.from_arrays(frames), nmap)
        theirs, _ = loaded.forward(Burst.from_arrays(frames), nmap)
        np.testing.assert_array_equal(mine.data, theirs.data)

    def test_non_finite_loss_aborts_with_batch_seeds(self, tmp_path):
        cfg = toy_config(iterations=10, cached_bursts=1, initial_lr=1e8)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(TrainAbort, match=r"iteration \d+.*seeds"):
                train(cfg, str(tmp_path / "run"))

    def test_smoke_run_loss_finite_throughout(self, tmp_path):
        cfg = toy_config(iterations=500)
        result = train(cfg, str(tmp_path / "smoke"))
        losses = [row[1] for row in result.history]
        assert len(losses) == 500
        assert np.all(np.isfinite(losses))

    def test_cached_bursts_deterministic(self):
        cfg = toy_config(cached_bursts=2)
        a = build_cached_bursts(cfg)
        b = build_cached_bursts(cfg)
        for s, t in zip(a, b):
            np.testing.assert_array_equal(s.frames, t.frames)
            assert s.preset == t.preset

    def test_cached_bursts_require_positive_count(self):
        with pytest.raises(ValueError, match="cached"):
            build_cached_bursts(toy_config())


class TestAblation:
    def test_rows_files_and_shared_data_manifest(self, tmp_path):
        cfg = toy_config(iterations=3)
        report = run_ablation([1, 6], cfg, str(tmp_path / "ab"), val_count=2)
        assert [r.name for r in report.rows] == [REFERENCE_ROW, "Model 1", "Model 6"]
        assert (tmp_path / "ab" / "ablation.txt").exists()
        assert (tmp_path / "ab" / "ablation.csv").exists()
        assert (tmp_path / "ab" / "ablation_chart.png").stat().st_size > 0
        m1 = (tmp_path / "ab" / "model_1" / "data_manifest.txt").read_bytes()
        m6 = (tmp_path / "ab" / "model_6" / "data_manifest.txt").read_bytes()
        assert m1 == m6
        from burstforge.burstgen import list_samples
        assert len(list_samples(str(tmp_path / "ab" / "validation"))) == 2

    def test_identical_seeds_give_identical_rows(self, tmp_path):
        cfg = toy_config(iterations=2)
        a = run_ablation([1], cfg, str(tmp_path / "x"), val_count=2)
        b = run_ablation([1], cfg, str(tmp_path / "y"), val_count=2)
        assert a.row("Model 1") == b.row("Model 1")

    def test_invalid_ids_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="model id"):
            run_ablation([7], toy_config(), str(tmp_path / "z"))
        with pytest.raises(ValueError, match="no model ids"):
            run_ablation([], toy_config(), str(tmp_path / "z"))

    def test_data_manifest_ignores_module_flags(self):
        cfg1 = toy_config()
        from dataclasses import replace
        from burstforge.network import build_ablation
        cfg2 = replace(cfg1, net=build_ablation(
            1, n_frames=TOY_NET.n_frames, kernel_size=3,
            encoder_widths=TOY_NET.encoder_widths, num_scales=2))
        assert data_manifest_text(cfg1) == data_manifest_text(cfg2)
