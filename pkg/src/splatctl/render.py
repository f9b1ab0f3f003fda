"""Differentiable splatting rasterizer: EWA projection, front-to-back
alpha compositing and the matching analytic backward pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _raster
from .core import (
    Camera,
    GaussianSet,
    build_covariance,
    normalize_quaternions,
    quaternion_to_rotation,
    rotation_grad_to_quaternion,
    sigmoid,
)
from .sh import sh_basis


@dataclass(frozen=True)
class RasterSettings:
    near: float = 0.01
    dilation: float = 0.3
    alpha_max: float = 0.99
    alpha_min: float = 1.0 / 255.0
    transmittance_min: float = 1e-4
    min_det: float = 1e-12


DEFAULT_SETTINGS = RasterSettings()


@dataclass
class Projection:
    """Per-Gaussian screen-space quantities for one view.

    Row ``i`` is the projected form of Gaussian ``i``; entries with
    ``visible[i] == False`` are placeholders and never rasterized.
    """

    mean2d: np.ndarray
    cov2d: np.ndarray
    conic: np.ndarray
    depth: np.ndarray
    color: np.ndarray
    opacity: np.ndarray
    visible: np.ndarray
    # retained for the backward pass
    t_cam: np.ndarray
    jac: np.ndarray
    proj: np.ndarray
    cov3d: np.ndarray
    rot: np.ndarray
    quat: np.ndarray
    quat_norm: np.ndarray
    scales: np.ndarray
    view_dir: np.ndarray
    view_dist: np.ndarray
    basis: np.ndarray
    basis_grad: np.ndarray
    color_active: np.ndarray
    sh_degree: int


@dataclass
class RenderBuffers:
    image: np.ndarray
    final_transmittance: np.ndarray
    n_contrib: np.ndarray
    projection: Projection
    order: np.ndarray
    tile_offsets: np.ndarray
    tile_entries: np.ndarray
    camera: Camera
    settings: RasterSettings
    sh_coeffs: np.ndarray
    n_gaussians: int


def project(gaussians: GaussianSet, cam: Camera, settings: RasterSettings = DEFAULT_SETTINGS) -> Projection:
    n = len(gaussians)
    rw = cam.rotation
    t_cam = gaussians.positions @ rw.T + cam.translation
    visible = t_cam[:, 2] > settings.near
    tz = np.where(visible, t_cam[:, 2], 1.0)
    tx, ty = t_cam[:, 0], t_cam[:, 1]

    mean2d = np.stack([cam.fx * tx / tz + cam.cx, cam.fy * ty / tz + cam.cy], axis=1)

    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = cam.fx / tz
    jac[:, 0, 2] = -cam.fx * tx / (tz * tz)
    jac[:, 1, 1] = cam.fy / tz
    jac[:, 1, 2] = -cam.fy * ty / (tz * tz)
    proj = jac @ rw

    quat_norm = np.linalg.norm(gaussians.rotations, axis=1)
    quat = normalize_quaternions(gaussians.rotations)
    scales = np.exp(gaussians.log_scales)
    rot = quaternion_to_rotation(quat)
    cov3d = build_covariance(scales, quat)
    cov_pre = proj @ cov3d @ np.swapaxes(proj, 1, 2)
    det_pre = cov_pre[:, 0, 0] * cov_pre[:, 1, 1] - cov_pre[:, 0, 1] * cov_pre[:, 1, 0]
    visible &= det_pre > settings.min_det

    cov2d = cov_pre + settings.dilation * np.eye(2)
    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] * cov2d[:, 1, 0]
    det = np.where(visible, det, 1.0)
    conic = np.stack(
        [cov2d[:, 1, 1] / det, -0.5 * (cov2d[:, 0, 1] + cov2d[:, 1, 0]) / det, cov2d[:, 0, 0] / det],
        axis=1,
    )

    degree = gaussians.active_sh_degree
    offset = gaussians.positions - cam.center
    dist = np.linalg.norm(offset, axis=1)
    dist = np.where(dist > 0, dist, 1.0)
    view_dir = offset / dist[:, None]
    basis, basis_grad = sh_basis(degree, view_dir, with_grad=True)
    nb = basis.shape[1]
    raw_color = np.einsum("ncb,nb->nc", gaussians.sh_coeffs[:, :, :nb], basis) + 0.5
    color_active = raw_color > 0
    color = np.where(color_active, raw_color, 0.0)

    return Projection(
        mean2d=mean2d,
        cov2d=cov2d,
        conic=conic,
        depth=t_cam[:, 2].copy(),
        color=color,
        opacity=sigmoid(gaussians.opacity_logits[:, 0]),
        visible=visible,
        t_cam=t_cam,
        jac=jac,
        proj=proj,
        cov3d=cov3d,
        rot=rot,
        quat=quat,
        quat_norm=quat_norm,
        scales=scales,
        view_dir=view_dir,
        view_dist=dist,
        basis=basis,
        basis_grad=basis_grad,
        color_active=color_active,
        sh_degree=degree,
    )


def _cull_radius(projection: Projection, order: np.ndarray, settings: RasterSettings) -> np.ndarray:
    """Pixel radius beyond which alpha is guaranteed below the contribution floor."""
    cov = projection.cov2d[order]
    a, b, c = cov[:, 0, 0], cov[:, 0, 1], cov[:, 1, 1]
    half_tr = 0.5 * (a + c)
    lam_max = half_tr + np.sqrt(np.maximum(half_tr * half_tr - (a * c - b * b), 0.0))
    opac = projection.opacity[order]
    with np.errstate(divide="ignore"):
        ratio = np.log(opac / settings.alpha_min)
    radius = np.where(ratio > 0, np.sqrt(2.0 * np.maximum(ratio, 0.0) * lam_max), -1.0)
    return np.where(radius >= 0, radius * (1.0 + 1e-6) + 1e-6, -1.0)


def _log_floor(opac: np.ndarray, settings: RasterSettings) -> np.ndarray:
    # conservative: the exact alpha test still runs within 1e-9 of the bound
    with np.errstate(divide="ignore"):
        return np.log(settings.alpha_min / opac) - 1e-9


def rasterize_forward(
    gaussians: GaussianSet, cam: Camera, settings: RasterSettings = DEFAULT_SETTINGS
) -> RenderBuffers:
    projection = project(gaussians, cam, settings)
    vis_idx = np.flatnonzero(projection.visible)
    # stable sort: equal depths keep index order
    order = vis_idx[np.argsort(projection.depth[vis_idx], kind="stable")]
    means = np.ascontiguousarray(projection.mean2d[order])
    conics = np.ascontiguousarray(projection.conic[order])
    opac = np.ascontiguousarray(projection.opacity[order])
    colors = np.ascontiguousarray(projection.color[order])
    log_floor = _log_floor(opac, settings)
    radii = _cull_radius(projection, order, settings)
    offsets, entries = _raster.bin_tiles(means, radii, cam.width, cam.height, _raster.TILE)
    image, final_t, n_contrib = _raster.composite_forward(
        means, conics, opac, log_floor, colors, offsets, entries, cam.width, cam.height, _raster.TILE,
        settings.alpha_min, settings.alpha_max, settings.transmittance_min,
    )
    return RenderBuffers(
        image=image,
        final_transmittance=final_t,
        n_contrib=n_contrib,
        projection=projection,
        order=order,
        tile_offsets=offsets,
        tile_entries=entries,
        camera=cam,
        settings=settings,
        sh_coeffs=gaussians.sh_coeffs,
        n_gaussians=len(gaussians),
    )


def render(gaussians: GaussianSet, cam: Camera, settings: RasterSettings = DEFAULT_SETTINGS) -> np.ndarray:
    return rasterize_forward(gaussians, cam, settings).image


def rasterize_backward(
    buffers: RenderBuffers, d_image: np.ndarray, gaussians: GaussianSet | None = None
) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every raw parameter group.

    ``d_image`` is dL/d(image) with the image's (H, W, 3) shape. Passing the
    rendered ``gaussians`` enables a consistency check against the buffers.
    """
    cam = buffers.camera
    d_image = np.asarray(d_image, dtype=np.float64)
    if d_image.shape != buffers.image.shape:
        raise ValueError(f"d_image shape {d_image.shape} does not match image {buffers.image.shape}")
    if gaussians is not None and (
        len(gaussians) != buffers.n_gaussians or gaussians.sh_coeffs.shape != buffers.sh_coeffs.shape
    ):
        raise ValueError("Gaussian set does not match the buffers it was rendered into")

    pr = buffers.projection
    n = buffers.n_gaussians
    order = buffers.order
    s = buffers.settings
    opac = np.ascontiguousarray(pr.opacity[order])
    dm_v, dconic_v, dopac_v, dcolor_v = _raster.composite_backward(
        np.ascontiguousarray(pr.mean2d[order]),
        np.ascontiguousarray(pr.conic[order]),
        opac,
        _log_floor(opac, s),
        np.ascontiguousarray(pr.color[order]),
        buffers.tile_offsets,
        buffers.tile_entries,
        cam.width,
        cam.height,
        _raster.TILE,
        s.alpha_min,
        s.alpha_max,
        buffers.final_transmittance,
        buffers.n_contrib,
        np.ascontiguousarray(d_image),
    )
    d_mean2d = np.zeros((n, 2))
    d_conic = np.zeros((n, 3))
    d_opac = np.zeros(n)
    d_color = np.zeros((n, 3))
    d_mean2d[order] = dm_v
    d_conic[order] = dconic_v
    d_opac[order] = dopac_v
    d_color[order] = dcolor_v
    return project_backward(pr, cam, buffers.sh_coeffs, d_mean2d, d_conic, d_opac, d_color)


def project_backward(
    pr: Projection,
    cam: Camera,
    sh_coeffs: np.ndarray,
    d_mean2d: np.ndarray,
    d_conic: np.ndarray,
    d_opac: np.ndarray,
    d_color: np.ndarray,
) -> dict[str, np.ndarray]:
    """Chain screen-space gradients back to raw Gaussian parameters."""
    n = pr.mean2d.shape[0]
    rw = cam.rotation

    # conic = inverse(cov2d); the off-diagonal conic entry appears once in
    # the exponent, so it is split evenly over the two symmetric slots
    g = np.empty((n, 2, 2))
    g[:, 0, 0] = d_conic[:, 0]
    g[:, 0, 1] = g[:, 1, 0] = 0.5 * d_conic[:, 1]
    g[:, 1, 1] = d_conic[:, 2]
    conic_m = np.empty((n, 2, 2))
    conic_m[:, 0, 0] = pr.conic[:, 0]
    conic_m[:, 0, 1] = conic_m[:, 1, 0] = pr.conic[:, 1]
    conic_m[:, 1, 1] = pr.conic[:, 2]
    d_cov2d = -conic_m @ g @ conic_m

    proj_t = np.swapaxes(pr.proj, 1, 2)
    d_cov3d = proj_t @ d_cov2d @ pr.proj
    d_proj = 2.0 * d_cov2d @ pr.proj @ pr.cov3d
    d_jac = d_proj @ rw.T

    tx, ty, tz = pr.t_cam[:, 0], pr.t_cam[:, 1], pr.t_cam[:, 2]
    tz = np.where(pr.visible, tz, 1.0)
    fx, fy = cam.fx, cam.fy
    d_t = np.zeros((n, 3))
    d_t[:, 0] = fx / tz * d_mean2d[:, 0] - fx / tz**2 * d_jac[:, 0, 2]
    d_t[:, 1] = fy / tz * d_mean2d[:, 1] - fy / tz**2 * d_jac[:, 1, 2]
    d_t[:, 2] = (
        -fx * tx / tz**2 * d_mean2d[:, 0]
        - fy * ty / tz**2 * d_mean2d[:, 1]
        - fx / tz**2 * d_jac[:, 0, 0]
        + 2 * fx * tx / tz**3 * d_jac[:, 0, 2]
        - fy / tz**2 * d_jac[:, 1, 1]
        + 2 * fy * ty / tz**3 * d_jac[:, 1, 2]
    )
    d_t[~pr.visible] = 0.0
    d_pos = d_t @ rw

    # view-dependent color
    nb = pr.basis.shape[1]
    d_raw = np.where(pr.color_active, d_color, 0.0)
    d_sh = np.zeros_like(sh_coeffs)
    d_sh[:, :, :nb] = d_raw[:, :, None] * pr.basis[:, None, :]
    if nb > 1:
        d_dir = np.einsum("nc,ncb,nbd->nd", d_raw, sh_coeffs[:, :, :nb], pr.basis_grad)
        radial = np.sum(d_dir * pr.view_dir, axis=1, keepdims=True)
        d_pos += (d_dir - radial * pr.view_dir) / pr.view_dist[:, None]

    # Sigma = M M^T with M = R diag(s)
    m = pr.rot * pr.scales[:, None, :]
    d_m = 2.0 * d_cov3d @ m
    d_scales = np.sum(d_m * pr.rot, axis=1)
    d_rot = d_m * pr.scales[:, None, :]
    d_quat = rotation_grad_to_quaternion(pr.quat, d_rot)
    radial_q = np.sum(d_quat * pr.quat, axis=1, keepdims=True)
    d_rotations = (d_quat - radial_q * pr.quat) / pr.quat_norm[:, None]

    return {
        "positions": d_pos,
        "log_scales": d_scales * pr.scales,
        "rotations": d_rotations,
        "opacity_logits": (d_opac * pr.opacity * (1.0 - pr.opacity))[:, None],
        "sh_coeffs": d_sh,
    }
