import filecmp
import os

import numpy as np
import pytest

from burstforge import images
from burstforge.burstgen import GAIN_PRESETS, list_samples, load_sample
from burstforge.cli import ENV_SEED, UsageError, main, parse_gain, resolve_seed
from burstforge.configfile import parse_config
from burstforge.network import KernelPredictionNet, NetConfig

TOY_CFG = """n_frames = 2
kernel_size = 3
encoder_widths = 4,8
num_scales = 2
iterations = 2
batch_size = 1
frame_size = 32
chart_count = 2
checkpoint_every = 1000000
seed = 5
"""


@pytest.fixture(scope="module")
def toy_ckpt(tmp_path_factory):
    d = tmp_path_factory.mktemp("ckpt")
    net = KernelPredictionNet(
        NetConfig(n_frames=2, kernel_size=3, encoder_widths=(4, 8), num_scales=2),
        seed=3,
    )
    path = d / "net.bfck"
    net.save(str(path))
    return str(path)


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("ds") / "data"
    rc = main(["synth", str(d), "--charts", "--count", "2", "--n", "2",
               "--gain", "2", "--frame-size", "64", "--chart-count", "2",
               "--seed", "11"])
    assert rc == 0
    return str(d)


class TestSeedResolution:
    def test_flag_beats_env(self, monkeypatch):
        monkeypatch.setenv(ENV_SEED, "77")
        assert resolve_seed(12) == 12

    def test_env_beats_config(self, monkeypatch):
        monkeypatch.setenv(ENV_SEED, "77")
        assert resolve_seed(None, config_value=5) == 77

    def test_config_beats_default(self, monkeypatch):
        monkeypatch.delenv(ENV_SEED, raising=False)
        assert resolve_seed(None, config_value=5, default=9) == 5
        assert resolve_seed(None, default=9) == 9

    def test_bad_env_rejected(self, monkeypatch):
        monkeypatch.setenv(ENV_SEED, "twelve")
        with pytest.raises(UsageError, match="BURSTFORGE_SEED"):
            resolve_seed(None)


class TestGainParsing:
    def test_table_presets(self):
        for k in range(1, 5):
            assert parse_gain(str(k)) == GAIN_PRESETS[k]

    def test_gain_three_values(self):
        preset = parse_gain("3")
        assert preset.sigma_r == 5e-2 and preset.sigma_s == 1e-2

    def test_custom_pair(self):
        preset = parse_gain("0.03,0.002")
        assert preset.sigma_r == 0.03 and preset.sigma_s == 0.002

    @pytest.mark.parametrize("bad", ["0", "5", "abc", "0.1,x", "1,2,3", "-0.1,0.2"])
    def test_invalid_rejected(self, bad):
        with pytest.raises(UsageError):
            parse_gain(bad)


class TestSynthCommand:
    def test_dataset_written_with_manifests(self, tiny_dataset):
        dirs = list_samples(tiny_dataset)
        assert len(dirs) == 2
        sample = load_sample(dirs[0])
        assert sample.preset == GAIN_PRESETS[2]
        assert sample.frames.shape == (2, 64, 64)
        run = os.path.join(tiny_dataset, "run_manifest.txt")
        entries = parse_config(run)
        assert entries["command"] == "synth"
        assert entries["seed"] == "11"
        assert entries["config.count"] == "2"

    def test_count_zero_valid(self, tmp_path):
        out = tmp_path / "empty"
        rc = main(["synth", str(out), "--charts", "--count", "0", "--seed", "1"])
        assert rc == 0
        assert list_samples(str(out)) == []

    def test_same_seed_byte_identical(self, tmp_path):
        argv = ["--charts", "--count", "2", "--n", "2", "--gain", "4",
                "--frame-size", "64", "--chart-count", "2", "--seed", "21"]
        assert main(["synth", str(tmp_path / "a"), *argv]) == 0
        assert main(["synth", str(tmp_path / "b"), *argv]) == 0
        for name in ("sample_0000", "sample_0001"):
            cmp = filecmp.dircmp(tmp_path / "a" / name, tmp_path / "b" / name)
            assert cmp.diff_files == [] and cmp.left_only == [] and cmp.right_only == []
        a = (tmp_path / "a" / "manifest.txt").read_bytes()
        assert a == (tmp_path / "b" / "manifest.txt").read_bytes()

    def test_env_seed_used_and_overridden(self, tmp_path, monkeypatch):
        monkeypatch.setenv(ENV_SEED, "33")
        argv = ["--charts", "--count", "0", "--chart-count", "2"]
        assert main(["synth", str(tmp_path / "env"), *argv]) == 0
        entries = parse_config(str(tmp_path / "env" / "manifest.txt"))
        assert entries["master_seed"] == "33"
        assert main(["synth", str(tmp_path / "flag"), *argv, "--seed", "44"]) == 0
        entries = parse_config(str(tmp_path / "flag" / "manifest.txt"))
        assert entries["master_seed"] == "44"

    def test_invalid_gain_exits_two(self, tmp_path, capsys):
        rc = main(["synth", str(tmp_path / "x"), "--charts", "--gain", "9"])
        assert rc == 2
        assert "gain" in capsys.readouterr().err


class TestTrainCommand:
    def test_training_run_artifacts_and_progress(self, tmp_path, capsys):
        cfg = tmp_path / "toy.cfg"
        cfg.write_text(TOY_CFG)
        out = tmp_path / "run"
        rc = main(["train", "--config", str(cfg), "--out", str(out),
                   "--progress-every", "1"])
        assert rc == 0
        captured = capsys.readouterr().out
        lines = [l for l in captured.splitlines() if l.startswith("iteration")]
        assert len(lines) == 2
        for key in ("loss", "anneal", "lr"):
            assert key in lines[0]
        assert (out / "model.bfck").exists()
        assert (out / "loss.csv").exists()
        entries = parse_config(str(out / "run_manifest.txt"))
        assert entries["command"] == "train"
        assert entries["config.seed"] == "5"

    def test_print_config_paper_profile(self, capsys):
        rc = main(["train", "--profile", "paper", "--print-config"])
        assert rc == 0
        entries = dict(
            line.split(" = ") for line in capsys.readouterr().out.splitlines()
        )
        assert entries["iterations"] == "80000"
        assert entries["batch_size"] == "16"
        assert entries["n_frames"] == "8"
        assert entries["initial_lr"] == "0.0001"

    def test_print_config_desk_profile(self, capsys):
        rc = main(["train", "--profile", "desk", "--print-config"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "iterations = 2000" in out
        assert "n_frames = 4" in out

    def test_model_flag_sets_modules(self, capsys):
        rc = main(["train", "--profile", "desk", "--model", "1", "--print-config"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "channel_attn = False" in out
        assert "spatial_attn = False" in out
        assert "residual_branch = False" in out

    def test_config_seed_vs_flag(self, tmp_path, capsys):
        cfg = tmp_path / "toy.cfg"
        cfg.write_text(TOY_CFG)
        rc = main(["train", "--config", str(cfg), "--print-config", "--seed", "42"])
        assert rc == 0
        assert "seed = 42" in capsys.readouterr().out

    def test_malformed_config_exits_two_with_line(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("n_frames = 2\nthis line has no separator\n")
        rc = main(["train", "--config", str(cfg), "--print-config"])
        assert rc == 2
        err = capsys.readouterr().err
        assert "line 2" in err

    def test_missing_config_exits_two(self, tmp_path):
        rc = main(["train", "--config", str(tmp_path / "nope.cfg"),
                   "--print-config"])
        assert rc == 2


class TestDenoiseCommand:
    def test_bundle_roundtrip(self, toy_ckpt, tiny_dataset, tmp_path):
        sample_dir = list_samples(tiny_dataset)[0]
        out = tmp_path / "out.png"
        rc = main(["denoise", toy_ckpt, "--bundle", sample_dir, "--out", str(out)])
        assert rc == 0
        result = images.read_image(str(out))
        assert result.shape == (64, 64)
        assert result.min() >= 0.0 and result.max() <= 1.0
        entries = parse_config(str(tmp_path / "run_manifest.txt"))
        assert entries["command"] == "denoise"
        assert "input.checkpoint" in entries

    def test_raster_frames_padded_and_cropped(self, toy_ckpt, tmp_path):
        # 34 is not divisible by the net's downsampling factor of 4
        rng = np.random.default_rng(8)
        paths = []
        for i in range(2):
            p = tmp_path / f"f{i}.png"
            images.write_image(str(p), rng.random((34, 34)), bit_depth=16)
            paths.append(str(p))
        out = tmp_path / "out.png"
        rc = main(["denoise", toy_ckpt, "--frames", *paths, "--out", str(out),
                   "--gain", "2"])
        assert rc == 0
        assert images.read_image(str(out)).shape == (34, 34)

    def test_rgb_per_channel(self, toy_ckpt, tmp_path):
        rng = np.random.default_rng(9)
        paths = []
        for i in range(2):
            p = tmp_path / f"c{i}.png"
            images.write_image(str(p), rng.random((32, 32, 3)), bit_depth=16)
            paths.append(str(p))
        out = tmp_path / "rgb.png"
        rc = main(["denoise", toy_ckpt, "--frames", *paths, "--out", str(out)])
        assert rc == 0
        assert images.read_image(str(out)).shape == (32, 32, 3)

    def test_rgb_forced_gray(self, toy_ckpt, tmp_path):
        rng = np.random.default_rng(10)
        paths = []
        for i in range(2):
            p = tmp_path / f"c{i}.png"
            images.write_image(str(p), rng.random((32, 32, 3)), bit_depth=16)
            paths.append(str(p))
        out = tmp_path / "gray.png"
        rc = main(["denoise", toy_ckpt, "--frames", *paths, "--out", str(out),
                   "--color-mode", "gray"])
        assert rc == 0
        assert images.read_image(str(out)).ndim == 2

    def test_frame_count_mismatch_exits_two(self, toy_ckpt, tmp_path, capsys):
        p = tmp_path / "only.png"
        images.write_image(str(p), np.zeros((32, 32)), bit_depth=16)
        rc = main(["denoise", toy_ckpt, "--frames", str(p),
                   "--out", str(tmp_path / "x.png")])
        assert rc == 2
        err = capsys.readouterr().err
        assert "expected 2" in err and "got 1" in err

    def test_bundle_frame_count_mismatch_exits_two(self, tiny_dataset, tmp_path,
                                                   capsys):
        net = KernelPredictionNet(
            NetConfig(n_frames=3, kernel_size=3, encoder_widths=(4, 8),
                      num_scales=2),
            seed=0,
        )
        ckpt = tmp_path / "n3.bfck"
        net.save(str(ckpt))
        sample_dir = list_samples(tiny_dataset)[0]
        rc = main(["denoise", str(ckpt), "--bundle", sample_dir,
                   "--out", str(tmp_path / "x.png")])
        assert rc == 2
        err = capsys.readouterr().err
        assert "2 frames" in err and "expects 3" in err


class TestEvalCommand:
    def test_report_files_and_reference_row(self, toy_ckpt, tiny_dataset,
                                            tmp_path, capsys):
        out = tmp_path / "ev"
        rc = main(["eval", toy_ckpt, tiny_dataset, "--gains", "1,2",
                   "--out", str(out)])
        assert rc == 0
        text = (out / "report.txt").read_text()
        assert "Reference frame" in text
        assert "Gain 1" in text and "Gain 2" in text
        assert (out / "report.csv").exists()
        assert (out / "report_per_image.csv").exists()
        assert (out / "report_chart.png").stat().st_size > 0
        assert "Reference frame" in capsys.readouterr().out

    def test_rerun_identical(self, toy_ckpt, tiny_dataset, tmp_path):
        rc = main(["eval", toy_ckpt, tiny_dataset, "--gains", "2",
                   "--out", str(tmp_path / "e1")])
        assert rc == 0
        rc = main(["eval", toy_ckpt, tiny_dataset, "--gains", "2",
                   "--out", str(tmp_path / "e2")])
        assert rc == 0
        a = (tmp_path / "e1" / "report.csv").read_bytes()
        assert a == (tmp_path / "e2" / "report.csv").read_bytes()

    def test_linear_domain(self, toy_ckpt, tiny_dataset, tmp_path):
        out = tmp_path / "lin"
        rc = main(["eval", toy_ckpt, tiny_dataset, "--gains", "2",
                   "--domain", "linear", "--out", str(out)])
        assert rc == 0
        assert "domain: linear" in (out / "report.txt").read_text()

    def test_missing_dataset_exits_three(self, toy_ckpt, tmp_path):
        rc = main(["eval", toy_ckpt, str(tmp_path / "nothing"),
                   "--out", str(tmp_path / "e")])
        assert rc == 3


class TestAblateCommand:
    def test_short_run(self, tmp_path, capsys):
        cfg = tmp_path / "toy.cfg"
        cfg.write_text(TOY_CFG)
        out = tmp_path / "ab"
        rc = main(["ablate", "--config", str(cfg), "--models", "1",
                   "--out", str(out), "--val-count", "1", "--seed", "2"])
        assert rc == 0
        assert (out / "ablation.txt").exists()
        assert (out / "model_1" / "model.bfck").exists()
        assert "Model 1" in capsys.readouterr().out

    @pytest.mark.parametrize("bad", ["", "7", "1,x"])
    def test_invalid_models_exit_two(self, bad, tmp_path):
        rc = main(["ablate", "--models", bad, "--out", str(tmp_path / "x")])
        assert rc == 2


class TestParserContract:
    def test_no_command_exits_two(self, capsys):
        assert main([]) == 2
        capsys.readouterr()

    def test_unknown_command_exits_two(self, capsys):
        assert main(["frobnicate"]) == 2
        capsys.readouterr()

    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0
        assert "synth" in capsys.readouterr().out
