import math

import numpy as np
import pytest

from burstforge.diffcore import Tensor
from burstforge.objective import (
    LossConfig,
    anneal_weight,
    basic_loss,
    gamma_correct,
    gamma_correct_array,
    total_loss,
)

from gradcheck import check_gradients


def np_basic_loss(pred, gt, lambda_grad=1.0, exponent=1.0 / 2.2):
    """Independent evaluation of the basic loss with plain numpy."""
    gp = np.power(np.clip(pred, 0, 1), exponent)
    gg = np.power(np.clip(gt, 0, 1), exponent)
    d = gp - gg
    loss = np.mean(d * d)
    dh = np.zeros_like(d)
    dh[:, :-1] = d[:, 1:] - d[:, :-1]
    dv = np.zeros_like(d)
    dv[:-1, :] = d[1:, :] - d[:-1, :]
    return loss + lambda_grad * (np.mean(np.abs(dv)) + np.mean(np.abs(dh)))


class TestGammaCorrect:
    def test_endpoints_fixed(self):
        out = gamma_correct(Tensor(np.array([0.0, 1.0])))
        np.testing.assert_array_equal(out.data, [0.0, 1.0])

    def test_midgray_value(self):
        got = gamma_correct(Tensor(np.array(0.5))).item()
        assert got == pytest.approx(0.5 ** (1.0 / 2.2), rel=1e-12)
        assert got == pytest.approx(0.7297, abs=5e-5)

    def test_monotone_on_sorted_vector(self):
        rng = np.random.default_rng(0)
        x = np.sort(rng.uniform(0, 1, size=64))
        out = gamma_correct(Tensor(x)).data
        assert np.all(np.diff(out) >= 0)

    def test_out_of_range_clamped(self):
        out = gamma_correct(Tensor(np.array([-0.3, 1.7])))
        np.testing.assert_array_equal(out.data, [0.0, 1.0])

    def test_array_twin_agrees(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(-0.2, 1.2, size=(5, 5))
        np.testing.assert_allclose(
            gamma_correct(Tensor(x)).data, gamma_correct_array(x), rtol=1e-15
        )


class TestBasicLoss:
    def test_identical_images_give_zero(self):
        rng = np.random.default_rng(2)
        img = rng.uniform(size=(8, 8))
        assert basic_loss(Tensor(img), Tensor(img.copy()), LossConfig()).item() == 0.0

    def test_constant_linear_offset_matches_gamma_mse(self):
        gt = np.full((6, 6), 0.5)
        pred = gt + 0.1
        cfg = LossConfig(lambda_grad=0.0)
        got = basic_loss(Tensor(pred), Tensor(gt), cfg).item()
        want = float(np.mean((gamma_correct_array(pred) - gamma_correct_array(gt)) ** 2))
        assert got == pytest.approx(want, rel=1e-12)

    def test_gradient_term_ignores_constant_gamma_offset(self):
        # constant offset in gamma domain has zero spatial gradient
        rng = np.random.default_rng(3)
        base = rng.uniform(0.2, 0.6, size=(7, 7))
        gt_g = gamma_correct_array(base)
        pred_g = gt_g + 0.05
        pred = np.power(pred_g, 2.2)
        with_grad = basic_loss(Tensor(pred), Tensor(base), LossConfig(lambda_grad=5.0)).item()
        without = basic_loss(Tensor(pred), Tensor(base), LossConfig(lambda_grad=0.0)).item()
        assert with_grad == pytest.approx(without, rel=1e-6)

    def test_matches_numpy_oracle_sweep(self):
        rng = np.random.default_rng(4)
        for lam in (0.0, 0.5, 1.0, 3.0):
            pred = rng.uniform(0.05, 0.95, size=(9, 10))
            gt = rng.uniform(0.05, 0.95, size=(9, 10))
            got = basic_loss(Tensor(pred), Tensor(gt), LossConfig(lambda_grad=lam)).item()
            assert got == pytest.approx(np_basic_loss(pred, gt, lam), rel=1e-10)

    def test_symmetric_under_swap(self):
        rng = np.random.default_rng(5)
        a = rng.uniform(size=(8, 8))
        b = rng.uniform(size=(8, 8))
        cfg = LossConfig(lambda_grad=2.0)
        assert basic_loss(Tensor(a), Tensor(b), cfg).item() == basic_loss(
            Tensor(b), Tensor(a), cfg
        ).item()

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="match"):
            basic_loss(Tensor(np.zeros((4, 4))), Tensor(np.zeros((4, 5))), LossConfig())

    def test_gradients(self):
        rng = np.random.default_rng(6)
        pred = rng.uniform(0.1, 0.9, size=(5, 5))
        gt = rng.uniform(0.1, 0.9, size=(5, 5))
        check_gradients(
            lambda ts: basic_loss(ts[0], ts[1], LossConfig(lambda_grad=1.5)),
            [pred, gt],
            rng=rng,
        )


class TestAnnealWeight:
    def test_initial_weight_is_beta(self):
        assert anneal_weight(0, LossConfig()) == 100.0

    def test_value_at_schedule_end(self):
        got = anneal_weight(80000, LossConfig())
        want = 100.0 * math.exp(80000 * math.log(0.9998))
        assert got == pytest.approx(want, rel=1e-8)
        assert got == pytest.approx(1.12e-5, rel=5e-3)

    def test_strictly_decreasing(self):
        cfg = LossConfig()
        values = [anneal_weight(t, cfg) for t in range(0, 5000, 97)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_step_ratio_is_alpha_to_rounding(self):
        cfg = LossConfig()
        ulp = np.finfo(np.float64).eps
        for t in range(0, 80000, 1717):
            ratio = anneal_weight(t + 1, cfg) / anneal_weight(t, cfg)
            assert abs(ratio - cfg.alpha) <= 2 * ulp * cfg.alpha

    def test_negative_iteration_rejected(self):
        with pytest.raises(ValueError):
            anneal_weight(-1, LossConfig())


class TestTotalLoss:
    def test_perfect_predictions_give_zero(self):
        rng = np.random.default_rng(7)
        gt = rng.uniform(size=(6, 6))
        per = np.stack([gt.copy() for _ in range(3)])
        out = total_loss(Tensor(gt.copy()), Tensor(per), Tensor(gt), 0, LossConfig())
        assert out.item() == 0.0

    def test_matches_hand_summed_oracle(self):
        rng = np.random.default_rng(8)
        cfg = LossConfig(lambda_grad=0.7)
        gt = rng.uniform(0.1, 0.9, size=(6, 6))
        denoised = rng.uniform(0.1, 0.9, size=(6, 6))
        per = rng.uniform(0.1, 0.9, size=(4, 6, 6))
        t = 1234
        got = total_loss(Tensor(denoised), Tensor(per), Tensor(gt), t, cfg).item()
        want = np_basic_loss(denoised, gt, 0.7) + (100.0 * 0.9998 ** t) * sum(
            np_basic_loss(per[i], gt, 0.7) for i in range(4)
        )
        assert got == pytest.approx(want, rel=1e-10)

    def test_total_bounded_below_by_basic(self):
        rng = np.random.default_rng(9)
        cfg = LossConfig()
        gt = rng.uniform(size=(5, 5))
        denoised = rng.uniform(size=(5, 5))
        per = rng.uniform(size=(3, 5, 5))
        for t in (0, 100, 10_000, 10_000_000):
            tot = total_loss(Tensor(denoised), Tensor(per), Tensor(gt), t, cfg).item()
            base = basic_loss(Tensor(denoised), Tensor(gt), cfg).item()
            assert tot >= base >= 0.0

    def test_late_iterations_approach_basic_loss(self):
        rng = np.random.default_rng(10)
        cfg = LossConfig()
        gt = rng.uniform(size=(5, 5))
        denoised = rng.uniform(size=(5, 5))
        per = rng.uniform(size=(3, 5, 5))
        t = 200_000
        tot = total_loss(Tensor(denoised), Tensor(per), Tensor(gt), t, cfg).item()
        base = basic_loss(Tensor(denoised), Tensor(gt), cfg).item()
        worst = max(basic_loss(Tensor(per[i]), Tensor(gt), cfg).item() for i in range(3))
        assert tot - base <= anneal_weight(t, cfg) * 3 * worst + 1e-15

    def test_gradients(self):
        rng = np.random.default_rng(11)
        gt = rng.uniform(0.1, 0.9, size=(4, 4))
        denoised = rng.uniform(0.1, 0.9, size=(4, 4))
        per = rng.uniform(0.1, 0.9, size=(2, 4, 4))
        check_gradients(
            lambda ts: total_loss(ts[0], ts[1], Tensor(gt), 50, LossConfig()),
            [denoised, per],
            rng=rng,
        )

    def test_mismatched_per_frame_rejected(self):
        with pytest.raises(ValueError, match="per-frame"):
            total_loss(
                Tensor(np.zeros((4, 4))),
                Tensor(np.zeros((2, 4, 5))),
                Tensor(np.zeros((4, 4))),
                0,
                LossConfig(),
            )


def test_loss_config_validation():
    with pytest.raises(ValueError, match="alpha"):
        LossConfig(alpha=1.0)
    with pytest.raises(ValueError, match="beta"):
        LossConfig(beta=0.0)
    with pytest.raises(ValueError, match="lambda"):
        LossConfig(lambda_grad=-0.1)
