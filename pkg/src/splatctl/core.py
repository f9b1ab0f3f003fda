"""Gaussian parameter model, activations and covariance construction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

OPACITY_CLAMP = 1e-6
# inverse_activate rejects opacities further than this outside (0, 1)
OPACITY_TOLERANCE = 1e-3


class DegenerateRotationError(ValueError):
    """A quaternion with zero norm cannot be turned into a rotation."""


def num_sh_bases(degree: int) -> int:
    return (degree + 1) ** 2


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


@dataclass
class GaussianSet:
    """Structure-of-arrays Gaussian model stored in raw (pre-activation) space.

    ``ids`` is a bookkeeping tag that follows every Gaussian through
    append/remove edits; it is never written to disk.
    """

    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    sh_coeffs: np.ndarray
    active_sh_degree: int = 0
    ids: np.ndarray | None = None
    next_id: int = field(default=0)

    def __post_init__(self):
        n = self.positions.shape[0]
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64).reshape(n, 3)
        self.log_scales = np.ascontiguousarray(self.log_scales, dtype=np.float64).reshape(n, 3)
        self.rotations = np.ascontiguousarray(self.rotations, dtype=np.float64).reshape(n, 4)
        self.opacity_logits = np.ascontiguousarray(self.opacity_logits, dtype=np.float64).reshape(n, 1)
        sh = np.asarray(self.sh_coeffs, dtype=np.float64)
        if sh.ndim != 3 or sh.shape[0] != n or sh.shape[1] != 3:
            raise ValueError(f"sh_coeffs must have shape (N, 3, B), got {sh.shape}")
        bases = sh.shape[2]
        degree = int(round(np.sqrt(bases))) - 1
        if num_sh_bases(degree) != bases:
            raise ValueError(f"sh_coeffs band count {bases} is not a square")
        self.sh_coeffs = np.ascontiguousarray(sh)
        if not 0 <= self.active_sh_degree <= degree:
            raise ValueError("active_sh_degree out of range")
        if self.ids is None:
            self.ids = np.arange(n, dtype=np.int64)
            self.next_id = max(self.next_id, n)
        else:
            self.ids = np.asarray(self.ids, dtype=np.int64).reshape(n)
            if n:
                self.next_id = max(self.next_id, int(self.ids.max()) + 1)

    @classmethod
    def empty(cls, sh_degree: int = 3) -> GaussianSet:
        return cls(
            positions=np.zeros((0, 3)),
            log_scales=np.zeros((0, 3)),
            rotations=np.zeros((0, 4)),
            opacity_logits=np.zeros((0, 1)),
            sh_coeffs=np.zeros((0, 3, num_sh_bases(sh_degree))),
        )

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def max_sh_degree(self) -> int:
        return int(round(np.sqrt(self.sh_coeffs.shape[2]))) - 1

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits[:, 0])

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    def copy(self) -> GaussianSet:
        return GaussianSet(
            self.positions.copy(),
            self.log_scales.copy(),
            self.rotations.copy(),
            self.opacity_logits.copy(),
            self.sh_coeffs.copy(),
            self.active_sh_degree,
            self.ids.copy(),
            self.next_id,
        )

    def keep(self, mask: np.ndarray) -> None:
        """Drop every Gaussian whose ``mask`` entry is False, preserving order."""
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (len(self),):
            raise ValueError("keep mask must have one entry per Gaussian")
        self.positions = self.positions[mask]
        self.log_scales = self.log_scales[mask]
        self.rotations = self.rotations[mask]
        self.opacity_logits = self.opacity_logits[mask]
        self.sh_coeffs = self.sh_coeffs[mask]
        self.ids = self.ids[mask]

    def append(self, positions, log_scales, rotations, opacity_logits, sh_coeffs) -> np.ndarray:
        """Append raw parameters at the end; returns the ids handed out."""
        n_new = np.asarray(positions).shape[0]
        new_ids = np.arange(self.next_id, self.next_id + n_new, dtype=np.int64)
        self.next_id += n_new
        self.positions = np.concatenate([self.positions, np.reshape(positions, (n_new, 3))])
        self.log_scales = np.concatenate([self.log_scales, np.reshape(log_scales, (n_new, 3))])
        self.rotations = np.concatenate([self.rotations, np.reshape(rotations, (n_new, 4))])
        self.opacity_logits = np.concatenate(
            [self.opacity_logits, np.reshape(opacity_logits, (n_new, 1))]
        )
        self.sh_coeffs = np.concatenate([self.sh_coeffs, np.asarray(sh_coeffs, dtype=np.float64)])
        self.ids = np.concatenate([self.ids, new_ids])
        return new_ids

    def parameters(self) -> dict[str, np.ndarray]:
        return {
            "positions": self.positions,
            "log_scales": self.log_scales,
            "rotations": self.rotations,
            "opacity_logits": self.opacity_logits,
            "sh_coeffs": self.sh_coeffs,
        }


PARAM_NAMES = ("positions", "log_scales", "rotations", "opacity_logits", "sh_coeffs")


@dataclass
class Camera:
    """Pinhole camera; ``world_to_camera`` maps world points into an
    x-right / y-down / z-forward camera frame."""

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    world_to_camera: np.ndarray

    def __post_init__(self):
        self.world_to_camera = np.asarray(self.world_to_camera, dtype=np.float64).reshape(4, 4)
        if self.width < 1 or self.height < 1:
            raise ValueError("camera size must be positive")
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        rot = self.world_to_camera[:3, :3]
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-6):
            raise ValueError("world_to_camera rotation block is not orthonormal")

    @property
    def rotation(self) -> np.ndarray:
        return self.world_to_camera[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.world_to_camera[:3, 3]

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation


@dataclass
class ActivatedGaussians:
    positions: np.ndarray
    scales: np.ndarray
    quaternions: np.ndarray
    opacities: np.ndarray
    sh_coeffs: np.ndarray
    active_sh_degree: int


def normalize_quaternions(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    norms = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise DegenerateRotationError("zero-norm quaternion")
    return q / norms


def activate(raw: GaussianSet) -> ActivatedGaussians:
    return ActivatedGaussians(
        positions=raw.positions,
        scales=np.exp(raw.log_scales),
        quaternions=normalize_quaternions(raw.rotations),
        opacities=sigmoid(raw.opacity_logits[:, 0]),
        sh_coeffs=raw.sh_coeffs,
        active_sh_degree=raw.active_sh_degree,
    )


def inverse_activate(alpha, scale) -> tuple[np.ndarray, np.ndarray]:
    """Map activated opacity and scale back to (opacity_logit, log_scale).

    Opacities are clamped to ``[1e-6, 1 - 1e-6]`` first; values that were
    outside (0, 1) by more than 1e-3 indicate an upstream bug and raise.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    scale = np.asarray(scale, dtype=np.float64)
    if np.any(alpha < -OPACITY_TOLERANCE) or np.any(alpha > 1.0 + OPACITY_TOLERANCE):
        raise ValueError("opacity outside (0, 1)")
    if np.any(~(scale > 0)):
        raise ValueError("scales must be strictly positive")
    alpha = np.clip(alpha, OPACITY_CLAMP, 1.0 - OPACITY_CLAMP)
    return logit(alpha), np.log(scale)


def quaternion_to_rotation(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for unit quaternions in (w, x, y, z) order; shape (..., 3, 3)."""
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=np.float64), -1, 0)
    r = np.empty(np.shape(w) + (3, 3))
    r[..., 0, 0] = 1 - 2 * (y * y + z * z)
    r[..., 0, 1] = 2 * (x * y - w * z)
    r[..., 0, 2] = 2 * (x * z + w * y)
    r[..., 1, 0] = 2 * (x * y + w * z)
    r[..., 1, 1] = 1 - 2 * (x * x + z * z)
    r[..., 1, 2] = 2 * (y * z - w * x)
    r[..., 2, 0] = 2 * (x * z - w * y)
    r[..., 2, 1] = 2 * (y * z + w * x)
    r[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return r


def rotation_grad_to_quaternion(q: np.ndarray, d_rot: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. rotation matrices back onto unit quaternions."""
    w, x, y, z = np.moveaxis(q, -1, 0)
    g = d_rot
    dw = 2 * (
        -z * g[..., 0, 1] + y * g[..., 0, 2] + z * g[..., 1, 0]
        - x * g[..., 1, 2] - y * g[..., 2, 0] + x * g[..., 2, 1]
    )
    dx = 2 * (
        y * g[..., 0, 1] + z * g[..., 0, 2] + y * g[..., 1, 0] - 2 * x * g[..., 1, 1]
        - w * g[..., 1, 2] + z * g[..., 2, 0] + w * g[..., 2, 1] - 2 * x * g[..., 2, 2]
    )
    dy = 2 * (
        -2 * y * g[..., 0, 0] + x * g[..., 0, 1] + w * g[..., 0, 2] + x * g[..., 1, 0]
        + z * g[..., 1, 2] - w * g[..., 2, 0] + z * g[..., 2, 1] - 2 * y * g[..., 2, 2]
    )
    dz = 2 * (
        -2 * z * g[..., 0, 0] - w * g[..., 0, 1] + x * g[..., 0, 2] + w * g[..., 1, 0]
        - 2 * z * g[..., 1, 1] + y * g[..., 1, 2] + x * g[..., 2, 0] + y * g[..., 2, 1]
    )
    return np.stack([dw, dx, dy, dz], axis=-1)


def build_covariance(scales: np.ndarray, quaternions: np.ndarray) -> np.ndarray:
    """Sigma = R S S^T R^T for scales (..., 3) and unit quaternions (..., 4)."""
    rot = quaternion_to_rotation(quaternions)
    m = rot * np.asarray(scales, dtype=np.float64)[..., None, :]
    return m @ np.swapaxes(m, -1, -2)


@dataclass
class TopologyEdit:
    """A structural change: keep ``keep`` of the previous Gaussians (in order),
    then append ``n_added`` new ones at the end."""

    keep: np.ndarray
    n_added: int = 0

    @property
    def n_removed(self) -> int:
        return int(self.keep.size - np.count_nonzero(self.keep))

    @classmethod
    def identity(cls, n: int) -> TopologyEdit:
        return cls(np.ones(n, dtype=bool), 0)
