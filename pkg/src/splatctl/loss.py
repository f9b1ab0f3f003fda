"""Photometric losses, opacity sparsity term and image metrics."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import GaussianSet, sigmoid

PSNR_CAP = 100.0


@dataclass
class LossConfig:
    lambda_w: float = 0.2
    lambda_alpha: float = 0.0
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    ssim_c1: float = 0.01**2
    ssim_c2: float = 0.03**2

    def __post_init__(self):
        if not 0.0 <= self.lambda_w <= 1.0:
            raise ValueError("lambda_w must lie in [0, 1]")
        if self.lambda_alpha < 0:
            raise ValueError("lambda_alpha must be nonnegative")


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")


def l1_loss(rendered: np.ndarray, target: np.ndarray) -> float:
    _check_pair(rendered, target)
    return float(np.mean(np.abs(rendered - target)))


def l1_grad(rendered: np.ndarray, target: np.ndarray) -> np.ndarray:
    return np.sign(rendered - target) / rendered.size


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    w = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return w / w.sum()


@lru_cache(maxsize=16)
def _band_matrix(n: int, size: int, sigma: float) -> np.ndarray:
    """(n - size + 1, n) matrix applying the window at every valid offset."""
    window = gaussian_window(size, sigma)
    out = np.zeros((n - size + 1, n))
    for i in range(n - size + 1):
        out[i, i : i + size] = window
    return out


def _separable(maps: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """``rows @ m @ cols.T`` for every trailing 2-D slice, as two flat GEMMs."""
    lead = maps.shape[:-2]
    h, w = maps.shape[-2:]
    flat = maps.reshape(-1, h, w)
    b = flat.shape[0]
    tmp = rows @ np.ascontiguousarray(flat.transpose(1, 0, 2)).reshape(h, b * w)
    tmp = tmp.reshape(rows.shape[0], b, w).transpose(1, 0, 2).reshape(-1, w) @ cols.T
    return tmp.reshape(lead + (rows.shape[0], cols.shape[0]))


def _filter_valid(maps: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Separable 'valid' correlation over the last two axes."""
    return _separable(maps, rows, cols)


def _filter_valid_adjoint(grad: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    return _separable(grad, np.ascontiguousarray(rows.T), np.ascontiguousarray(cols.T))


def _ssim_terms(x: np.ndarray, y: np.ndarray, cfg: LossConfig):
    if x.shape[0] < cfg.ssim_window or x.shape[1] < cfg.ssim_window:
        raise ValueError("image is smaller than the SSIM window")
    rows = _band_matrix(x.shape[0], cfg.ssim_window, cfg.ssim_sigma)
    cols = _band_matrix(x.shape[1], cfg.ssim_window, cfg.ssim_sigma)
    # channels first so filtering runs over the trailing spatial axes
    xc = np.moveaxis(x, -1, 0)
    yc = np.moveaxis(y, -1, 0)
    stats = _filter_valid(np.stack([xc, yc, xc * xc, yc * yc, xc * yc]), rows, cols)
    mu_x, mu_y, e_xx, e_yy, e_xy = stats
    var_x = e_xx - mu_x * mu_x
    var_y = e_yy - mu_y * mu_y
    cov = e_xy - mu_x * mu_y
    a1 = 2 * mu_x * mu_y + cfg.ssim_c1
    a2 = 2 * cov + cfg.ssim_c2
    b1 = mu_x * mu_x + mu_y * mu_y + cfg.ssim_c1
    b2 = var_x + var_y + cfg.ssim_c2
    smap = (a1 * a2) / (b1 * b2)
    return (rows, cols), xc, yc, mu_x, mu_y, a1, a2, b1, b2, smap


def ssim(x: np.ndarray, y: np.ndarray, cfg: LossConfig | None = None) -> float:
    """Mean SSIM over channels and fully-covered window positions."""
    _check_pair(x, y)
    cfg = cfg or LossConfig()
    return float(np.mean(_ssim_terms(x, y, cfg)[-1]))


def dssim_loss(rendered: np.ndarray, target: np.ndarray, cfg: LossConfig | None = None):
    """Return ``(1 - SSIM, d/d rendered)``."""
    _check_pair(rendered, target)
    cfg = cfg or LossConfig()
    (rows, cols), xc, yc, mu_x, mu_y, a1, a2, b1, b2, smap = _ssim_terms(rendered, target, cfg)
    count = smap.size
    denom = b1 * b2
    d_mu = (2 * mu_y * (a2 - a1) / denom - 2 * mu_x * smap * (1.0 / b1 - 1.0 / b2)) / count
    d_exx = -smap / b2 / count
    d_exy = 2 * a1 / denom / count
    back = _filter_valid_adjoint(np.stack([d_mu, d_exx, d_exy]), rows, cols)
    grad_ssim = back[0] + 2 * xc * back[1] + yc * back[2]
    return 1.0 - float(np.mean(smap)), -np.moveaxis(grad_ssim, 0, -1)


def rgb_loss(rendered: np.ndarray, target: np.ndarray, cfg: LossConfig | None = None):
    """``(1 - lambda_w) * L1 + lambda_w * (1 - SSIM)`` and its image gradient."""
    cfg = cfg or LossConfig()
    l1 = l1_loss(rendered, target)
    grad = (1.0 - cfg.lambda_w) * l1_grad(rendered, target)
    if cfg.lambda_w == 0.0:
        return l1, grad
    d, d_grad = dssim_loss(rendered, target, cfg)
    return (1.0 - cfg.lambda_w) * l1 + cfg.lambda_w * d, grad + cfg.lambda_w * d_grad


def opacity_l1(gaussians: GaussianSet):
    """Sum of activated opacities and its gradient w.r.t. the opacity logits."""
    alpha = sigmoid(gaussians.opacity_logits)
    return float(np.sum(alpha)), alpha * (1.0 - alpha)


@dataclass
class LossResult:
    total: float
    rgb: float
    opacity_reg: float
    d_image: np.ndarray
    d_opacity_logits: np.ndarray


def total_loss(rendered, target, gaussians: GaussianSet, cfg: LossConfig) -> LossResult:
    """Photometric loss plus ``lambda_alpha`` times the opacity L1 term.

    The regularizer's gradient is returned separately; it only ever touches
    the opacity logits.
    """
    rgb, d_image = rgb_loss(rendered, target, cfg)
    reg, d_reg = opacity_l1(gaussians)
    return LossResult(
        total=rgb + cfg.lambda_alpha * reg,
        rgb=rgb,
        opacity_reg=reg,
        d_image=d_image,
        d_opacity_logits=cfg.lambda_alpha * d_reg,
    )


def psnr(rendered: np.ndarray, target: np.ndarray) -> float:
    _check_pair(rendered, target)
    mse = float(np.mean((rendered - target) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))
