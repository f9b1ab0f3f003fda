import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from splatctl.core import GaussianSet, logit
from splatctl.loss import (
    PSNR_CAP,
    LossConfig,
    dssim_loss,
    l1_loss,
    opacity_l1,
    psnr,
    rgb_loss,
    ssim,
    total_loss,
)
from oracles import central_difference, reference_ssim, relative_error


def structured(h=24, w=20, seed=0):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w]
    base = 0.5 + 0.4 * np.sin(xx / 3.0)[..., None] * np.cos(yy / 4.0)[..., None]
    return np.clip(base + 0.05 * rng.normal(size=(h, w, 3)), 0.0, 1.0)


def with_opacities(alpha):
    alpha = np.asarray(alpha, dtype=float)
    n = alpha.size
    return GaussianSet(np.zeros((n, 3)), np.zeros((n, 3)), np.tile([1.0, 0, 0, 0], (n, 1)),
                       logit(alpha).reshape(n, 1), np.zeros((n, 3, 1)))


def test_l1_examples():
    x = np.random.default_rng(0).uniform(size=(2, 2, 3))
    assert l1_loss(x, x) == 0.0
    assert l1_loss(x + 0.1, x) == pytest.approx(0.1)
    y = x.copy()
    y[1, 0, 2] += 0.3
    assert l1_loss(x, y) == pytest.approx(0.025)
    with pytest.raises(ValueError):
        l1_loss(x, x[:1])


def test_ssim_matches_direct_window_sums():
    x, y = structured(seed=1), structured(seed=2)
    assert ssim(x, y) == pytest.approx(reference_ssim(x, y), abs=1e-12)


def test_ssim_identity_and_inversion():
    x = structured()
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)
    assert dssim_loss(x, x)[0] == pytest.approx(0.0, abs=1e-12)
    assert dssim_loss(1.0 - x, x)[0] > 0.5


@pytest.mark.parametrize("eps", [1e-2, 1e-3, 1e-4, 1e-5])
def test_dssim_continuous_at_identity(eps):
    c = np.full((16, 16, 3), 0.4)
    assert dssim_loss(c + eps, c)[0] < 10 * eps


def test_ssim_rejects_small_images():
    with pytest.raises(ValueError):
        ssim(np.zeros((10, 30, 3)), np.zeros((10, 30, 3)))


@given(st.integers(0, 1000))
@settings(max_examples=10, deadline=None)
def test_dssim_is_symmetric(seed):
    rng = np.random.default_rng(seed)
    x, y = rng.uniform(size=(14, 13, 3)), rng.uniform(size=(14, 13, 3))
    assert dssim_loss(x, y)[0] == pytest.approx(dssim_loss(y, x)[0], abs=1e-12)


def test_dssim_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    x, y = rng.uniform(size=(13, 14, 3)), rng.uniform(size=(13, 14, 3))
    _, grad = dssim_loss(x, y)
    fd = central_difference(lambda: dssim_loss(x, y)[0], x)
    assert relative_error(grad, fd).max() < 1e-3


def test_rgb_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    x, y = rng.uniform(size=(12, 12, 3)), rng.uniform(size=(12, 12, 3))
    _, grad = rgb_loss(x, y)
    fd = central_difference(lambda: rgb_loss(x, y)[0], x)
    assert relative_error(grad, fd).max() < 1e-3


def test_rgb_loss_weighting():
    x, y = structured(seed=3), structured(seed=4)
    l1, d = l1_loss(x, y), dssim_loss(x, y)[0]
    assert rgb_loss(x, y)[0] == pytest.approx(0.8 * l1 + 0.2 * d)
    assert rgb_loss(x, y, LossConfig(lambda_w=0.0))[0] == l1
    assert rgb_loss(x, x)[0] == pytest.approx(0.0, abs=1e-12)


@given(st.integers(0, 1000))
@settings(max_examples=10, deadline=None)
def test_rgb_loss_positive_for_distinct_images(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=(12, 12, 3))
    y = x.copy()
    y[rng.integers(12), rng.integers(12), rng.integers(3)] += 0.01
    assert rgb_loss(x, y)[0] > 0.0


@pytest.mark.parametrize("alpha, expected", [([0.5, 0.25], 0.75), ([], 0.0), ([0.5] * 100, 50.0)])
def test_opacity_l1_examples(alpha, expected):
    value, grad = opacity_l1(with_opacities(alpha))
    assert value == pytest.approx(expected)
    assert grad.shape == (len(alpha), 1)


@given(arrays(np.float64, 5, elements=st.floats(0.01, 0.98)), st.integers(0, 4))
def test_opacity_l1_strictly_monotone(alpha, i):
    bumped = alpha.copy()
    bumped[i] += 0.01
    assert opacity_l1(with_opacities(bumped))[0] > opacity_l1(with_opacities(alpha))[0]


def test_total_loss_routing_and_linearity():
    g = with_opacities([0.3, 0.6, 0.9])
    x, y = structured(seed=5), structured(seed=6)
    base = total_loss(x, y, g, LossConfig(lambda_alpha=0.0))
    assert base.total == rgb_loss(x, y)[0]
    assert np.all(base.d_opacity_logits == 0.0)
    reg = opacity_l1(g)[0]
    for lam in (1e-6, 1e-3, 0.5):
        res = total_loss(x, y, g, LossConfig(lambda_alpha=lam))
        assert res.total == pytest.approx(base.total + lam * reg, rel=1e-12)
        np.testing.assert_array_equal(res.d_image, base.d_image)
        a = np.array([0.3, 0.6, 0.9])
        np.testing.assert_allclose(res.d_opacity_logits[:, 0], lam * a * (1 - a))


def test_total_loss_hand_value():
    # identical images: L_RGB = 0, and 2000 opacities of 0.5 sum to 1000
    g = with_opacities([0.5] * 2000)
    x = structured()
    res = total_loss(x, x, g, LossConfig(lambda_alpha=1e-6))
    assert res.opacity_reg == pytest.approx(1000.0)
    assert res.total == pytest.approx(1e-3)


@pytest.mark.parametrize("mse, expected", [(0.01, 20.0), (1e-4, 40.0)])
def test_psnr_examples(mse, expected):
    x = np.zeros((4, 4, 3))
    assert psnr(x + np.sqrt(mse), x) == pytest.approx(expected, abs=1e-9)


def test_psnr_cap():
    x = np.ones((4, 4, 3))
    assert psnr(x, x) == PSNR_CAP >= 100.0


@pytest.mark.parametrize("kwargs", [{"lambda_w": -0.1}, {"lambda_w": 1.1}, {"lambda_alpha": -1.0}])
def test_loss_config_validation(kwargs):
    with pytest.raises(ValueError):
        LossConfig(**kwargs)
