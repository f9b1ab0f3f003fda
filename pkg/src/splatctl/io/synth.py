"""Synthetic scenes with a known ground-truth Gaussian set."""

from __future__ import annotations

import math

import numpy as np

from ..core import GaussianSet, logit, num_sh_bases
from ..render import render
from ..sh import dc_to_rgb, rgb_to_dc
from .dataset import Dataset, camera_from_c2w

CAMERA_RADIUS = 3.0
# view cone wide enough to hold the unit ball with a margin
CAMERA_ANGLE_X = 2.0 * math.atan(1.25 / CAMERA_RADIUS)
INIT_POINT_NOISE = 0.05


def look_at_c2w(center: np.ndarray, target=np.zeros(3)) -> np.ndarray:
    """Camera-to-world matrix (OpenGL axes) for a camera at ``center`` facing ``target``."""
    forward = target - center
    forward = forward / np.linalg.norm(forward)
    up = np.array([0.0, 0.0, 1.0])
    if abs(forward @ up) > 0.99:
        up = np.array([0.0, 1.0, 0.0])
    right = np.cross(forward, up)
    right /= np.linalg.norm(right)
    true_up = np.cross(right, forward)
    c2w = np.eye(4)
    c2w[:3, 0] = right
    c2w[:3, 1] = true_up
    c2w[:3, 2] = -forward
    c2w[:3, 3] = center
    return c2w


def sphere_views(n_views: int, radius: float = CAMERA_RADIUS) -> np.ndarray:
    """Camera centers spread over a sphere on a Fibonacci lattice."""
    i = np.arange(n_views) + 0.5
    z = 1.0 - 2.0 * i / n_views
    r = np.sqrt(1.0 - z * z)
    phi = math.pi * (3.0 - math.sqrt(5.0)) * i
    return radius * np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def random_gaussians(k: int, rng: np.random.Generator, sh_degree: int = 3) -> GaussianSet:
    direction = rng.normal(size=(k, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    positions = direction * rng.uniform(0.0, 1.0, size=(k, 1)) ** (1.0 / 3.0)
    log_scales = rng.uniform(np.log(0.02), np.log(0.15), size=(k, 3))
    rotations = rng.normal(size=(k, 4))
    rotations /= np.linalg.norm(rotations, axis=1, keepdims=True)
    opacity = rng.uniform(0.5, 0.95, size=(k, 1))
    sh = np.zeros((k, 3, num_sh_bases(sh_degree)))
    sh[:, :, 0] = rgb_to_dc(rng.uniform(0.0, 1.0, size=(k, 3)))
    return GaussianSet(positions, log_scales, rotations, logit(opacity), sh)


def synth_scene(k: int = 64, seed: int = 42, n_views: int = 28, resolution: int = 128):
    """Random ground-truth scene rendered from ``n_views`` orbit cameras.

    Returns ``(ground_truth, dataset)``; the dataset's initial points are the
    true centers jittered by N(0, 0.05) and carry the true base colors.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    rng = np.random.default_rng(seed)
    gt = random_gaussians(k, rng)
    cameras = [
        camera_from_c2w(look_at_c2w(c), CAMERA_ANGLE_X, resolution, resolution)
        for c in sphere_views(n_views)
    ]
    images = [render(gt, cam) for cam in cameras]
    init_points = gt.positions + rng.normal(scale=INIT_POINT_NOISE, size=(k, 3))
    init_colors = np.clip(dc_to_rgb(gt.sh_coeffs[:, :, 0]), 0.0, 1.0)
    return gt, Dataset(cameras, images, init_points, init_colors, CAMERA_ANGLE_X)
