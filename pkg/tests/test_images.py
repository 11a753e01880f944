"""Raster IO round trips through the OpenCV-backed helpers."""

import numpy as np
import pytest

from burstforge import images


class TestRoundTrip:
    def test_gray_16bit_exact_on_grid(self, tmp_path):
        # multiples of 1/65535 survive quantization exactly
        vals = np.arange(0, 65536, 257, dtype=np.float64) / 65535.0
        img = np.tile(vals, (4, 1))
        path = str(tmp_path / "g.png")
        images.write_image(path, img, bit_depth=16)
        back = images.read_image(path)
        np.testing.assert_allclose(back, img, rtol=0, atol=1e-12)

    def test_gray_8bit(self, tmp_path):
        img = np.linspace(0, 1, 256).reshape(16, 16)
        path = str(tmp_path / "g8.png")
        images.write_image(path, img, bit_depth=8)
        back = images.read_image(path)
        assert back.shape == (16, 16)
        assert np.abs(back - img).max() <= 0.5 / 255.0 + 1e-12

    def test_rgb_channel_order_preserved(self, tmp_path):
        img = np.zeros((4, 4, 3))
        img[:, :, 0] = 1.0  # pure red
        img[0, 0] = (0.0, 1.0, 0.0)
        path = str(tmp_path / "c.png")
        images.write_image(path, img)
        back = images.read_image(path)
        np.testing.assert_allclose(back, img, rtol=0, atol=1e-12)

    def test_out_of_range_values_clipped_on_write(self, tmp_path):
        path = str(tmp_path / "clip.png")
        images.write_image(path, np.array([[-0.5, 1.5]]))
        np.testing.assert_array_equal(images.read_image(path), [[0.0, 1.0]])


class TestValidation:
    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="could not read"):
            images.read_image(str(tmp_path / "absent.png"))

    def test_bad_bit_depth_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="bit_depth"):
            images.write_image(str(tmp_path / "x.png"), np.zeros((4, 4)), bit_depth=12)

    def test_bad_shapes_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            images.write_image(str(tmp_path / "x.png"), np.zeros((4, 4, 2)))
        with pytest.raises(ValueError):
            images.write_image(str(tmp_path / "x.png"), np.zeros(4))


class TestGrayscale:
    def test_channel_mean(self):
        img = np.zeros((2, 2, 3))
        img[:, :, 0] = 0.9
        img[:, :, 1] = 0.3
        np.testing.assert_allclose(images.to_grayscale(img), np.full((2, 2), 0.4))

    def test_gray_passthrough(self):
        img = np.random.default_rng(0).uniform(0, 1, (5, 5))
        np.testing.assert_array_equal(images.to_grayscale(img), img)

    def test_bad_rank_rejected(self):
        with pytest.raises(ValueError):
            images.to_grayscale(np.zeros((2, 2, 4)))


class TestListing:
    def test_sorted_and_filtered(self, tmp_path):
        for name in ("c.png", "a.tif", "b.bmp", "notes.txt"):
            (tmp_path / name).write_bytes(b"")
        paths = images.list_rasters(str(tmp_path))
        assert [p.split("/")[-1] for p in paths] == ["a.tif", "b.bmp", "c.png"]
