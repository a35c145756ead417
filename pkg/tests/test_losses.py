import numpy as np
import pytest

from remar_ds import autodiff as ad
from remar_ds.autodiff import Tensor
from remar_ds.losses import (TABLE1_PRESETS, LossSpec, ffl_loss, l1_weighted, ms_ssim, msssim_loss, msssim_weights,
                             mse_loss, ssim, ssim_loss, total_loss, weight_map)
from remar_ds.oracles import brute_ffl, brute_msssim, brute_ssim

C1 = (0.01 * 2) ** 2


def _t(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def _rand(rng, shape=(1, 1, 32, 32)):
    return rng.uniform(-1, 1, shape)


def test_l1w_hand_value():
    recon = _t([[[[1.0, 2.0], [3.0, 4.0]]]])
    target = np.ones((1, 1, 2, 2))
    mask = np.array([[True, True], [False, False]])
    w = weight_map(mask, True)
    assert float(l1_weighted(recon, target, w).data) == pytest.approx(25.125, abs=1e-12)


def test_l1w_zero_when_equal(rng):
    x = _rand(rng)
    assert float(l1_weighted(_t(x), x, np.ones_like(x)).data) == 0.0


def test_l1w_homogeneous_in_weights(rng):
    x, y = _rand(rng), _rand(rng)
    w = rng.uniform(0.1, 5, x.shape)
    a = float(l1_weighted(_t(x), y, w).data)
    b = float(l1_weighted(_t(x), y, 2 * w).data)
    assert b == pytest.approx(2 * a, rel=1e-14)


def test_weight_map_values():
    mask = np.zeros((2, 4, 4), dtype=bool)
    mask[:, 1:3, 1:3] = True
    w = weight_map(mask, [True, False])
    assert w.shape == (2, 1, 4, 4)
    assert set(np.unique(w[0])) == {100.0, 0.1}
    assert np.all(w[0, 0][mask[0]] == 100.0)
    assert np.all(w[1] == 1.0)


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        mse_loss(_t(np.zeros((1, 1, 4, 4))), np.zeros((1, 1, 4, 5)))
    with pytest.raises(ValueError):
        l1_weighted(_t(np.zeros((1, 1, 4, 4))), np.zeros((1, 1, 4, 4)), np.ones((1, 1, 2, 2)))


def test_mse_constant_offset(rng):
    x = _rand(rng)
    assert float(mse_loss(_t(x + 0.5), x).data) == pytest.approx(0.25, abs=1e-14)
    assert float(mse_loss(_t(x), x).data) == 0.0


def test_mse_gradient_formula(rng):
    x, y = _rand(rng), _rand(rng)
    r = _t(x, grad=True)
    mse_loss(r, y).backward()
    np.testing.assert_allclose(r.grad, 2 * (x - y) / x.size, rtol=1e-12)


@pytest.mark.parametrize("a,b", [(0.3, -0.2), (0.9, 0.1), (-0.5, -0.5), (0.0, 0.7)])
def test_ssim_constant_images_closed_form(a, b):
    x = np.full((1, 1, 16, 16), a)
    y = np.full((1, 1, 16, 16), b)
    expected = (2 * a * b + C1) / (a * a + b * b + C1)
    assert abs(float(ssim(_t(x), y).data) - expected) < 1e-10


def test_ssim_identical_is_one(rng):
    x = _rand(rng)
    assert float(ssim(_t(x), x).data) == pytest.approx(1.0, abs=1e-12)
    assert abs(float(ssim_loss(_t(x), x).data)) < 1e-12


@pytest.mark.parametrize("seed", range(3))
def test_ssim_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    x, y = _rand(rng), _rand(rng)
    assert abs(float(ssim(_t(x), y).data) - brute_ssim(x[0, 0], y[0, 0])) < 1e-8


def test_msssim_matches_brute_force(rng):
    x = _rand(rng, (1, 1, 64, 64))
    y = np.clip(x + 0.2 * rng.standard_normal(x.shape), -1, 1)
    assert abs(float(ms_ssim(_t(x), y).data) - brute_msssim(x[0, 0], y[0, 0], 3)) < 1e-8
    assert abs(float(msssim_loss(_t(x), x).data)) < 1e-12


def test_msssim_weights_renormalized():
    w = msssim_weights(3)
    assert w.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(w, np.array([0.0448, 0.2856, 0.3001]) / 0.6305)


@pytest.mark.parametrize("size,scales", [(8, 1), (32, 3), (40, 3)])
def test_msssim_too_small_rejected(size, scales):
    x = np.zeros((1, 1, size, size))
    with pytest.raises(ValueError):
        ms_ssim(_t(x), x, scales=scales)


def test_ssim_losses_positive_for_distinct_random_pairs():
    rng = np.random.default_rng(0)
    for _ in range(10):
        x, y = _rand(rng, (1, 1, 64, 64)), _rand(rng, (1, 1, 64, 64))
        assert float(ssim_loss(_t(x), y).data) > 0
        assert float(msssim_loss(_t(x), y).data) > 0


def test_ffl_identical_is_zero(rng):
    x = _rand(rng, (2, 1, 8, 8))
    assert float(ffl_loss(_t(x), x).data) == 0.0


def test_ffl_parseval(rng):
    x, y = _rand(rng, (2, 1, 16, 16)), _rand(rng, (2, 1, 16, 16))
    got = float(ffl_loss(_t(x), y, alpha=0.0, beta=1.0).data)
    spatial = np.sum((x - y) ** 2) / 2
    assert got == pytest.approx(spatial, rel=1e-12)


def test_ffl_single_pixel_brute_force():
    x = np.zeros((1, 1, 8, 8))
    y = np.zeros((1, 1, 8, 8))
    x[0, 0, 3, 5] = 0.7
    got = float(ffl_loss(_t(x), y, alpha=0.5, beta=1.0).data)
    assert abs(got - brute_ffl(x[0, 0], y[0, 0], 0.5, 1.0)) < 1e-9


def test_ffl_random_brute_force(rng):
    x, y = _rand(rng, (1, 1, 8, 8)), _rand(rng, (1, 1, 8, 8))
    got = float(ffl_loss(_t(x), y, alpha=0.5, beta=2.0).data)
    assert abs(got - brute_ffl(x[0, 0], y[0, 0], 0.5, 2.0)) < 1e-9


def test_ffl_rejects_non_square():
    x = np.zeros((1, 1, 8, 16))
    with pytest.raises(ValueError, match="square"):
        ffl_loss(_t(x), x)


def test_total_loss_composition(rng):
    x, y = _rand(rng), _rand(rng)
    w = weight_map(np.ones((1, 32, 32), bool), True)
    total, parts = total_loss(_t(x), y, w, LossSpec(use_mse=True))
    expected = float(l1_weighted(_t(x), y, w).data) + float(mse_loss(_t(x), y).data)
    assert float(total.data) == pytest.approx(expected, rel=1e-14)
    assert set(parts) == {"l1w", "mse", "total"}


def test_total_loss_zero_at_target(rng):
    x = _rand(rng)
    total, _ = total_loss(_t(x), x, np.ones_like(x), LossSpec())
    assert float(total.data) == 0.0


def test_empty_spec_rejected():
    with pytest.raises(ValueError):
        LossSpec(use_l1w=False)


@pytest.mark.parametrize("name", list(TABLE1_PRESETS))
def test_presets_finite_values_and_gradients(name):
    rng = np.random.default_rng(3)
    x, y = _rand(rng, (2, 1, 64, 64)), _rand(rng, (2, 1, 64, 64))
    mask = np.zeros((2, 64, 64), bool)
    mask[:, 16:48, 16:48] = True
    r = _t(x, grad=True)
    total, parts = total_loss(r, y, weight_map(mask, [True, False]), TABLE1_PRESETS[name])
    total.backward()
    assert np.isfinite(float(total.data)) and all(np.isfinite(v) for v in parts.values())
    assert np.all(np.isfinite(r.grad)) and np.any(r.grad != 0)


def test_preset_labels():
    assert [s.label for s in TABLE1_PRESETS.values()] == [
        "L1w", "L1w+SSIM", "L1w+MS-SSIM", "L1w+MSE", "L1w+FFL", "L1w+SSIM+FFL"]
