"""Multi-view datasets in the transforms-manifest layout, plus initialization."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.spatial import cKDTree

from ..core import Camera, GaussianSet, logit, num_sh_bases
from ..sh import rgb_to_dc
from .ply import PlyError, read_points

MANIFEST = "transforms.json"
POINTS_FILE = "points3d.ply"
TEST_EVERY = 8
# OpenGL camera axes (x right, y up, z back) -> x right, y down, z forward
GL_TO_CV = np.diag([1.0, -1.0, -1.0, 1.0])


class DatasetError(Exception):
    pass


class ManifestError(DatasetError):
    """Manifest missing or malformed."""


class EmptyDatasetError(DatasetError):
    pass


class ImageReadError(DatasetError):
    pass


class PoseError(DatasetError):
    """A frame pose cannot be turned into a rigid world-to-camera transform."""


@dataclass
class Dataset:
    cameras: list[Camera]
    images: list[np.ndarray]
    init_points: np.ndarray
    init_colors: np.ndarray
    camera_angle_x: float | None = None

    def __post_init__(self):
        if len(self.cameras) != len(self.images):
            raise DatasetError("camera and image counts differ")

    def __len__(self) -> int:
        return len(self.cameras)

    @property
    def test_indices(self) -> list[int]:
        return [i for i in range(len(self)) if i % TEST_EVERY == 0]

    @property
    def train_indices(self) -> list[int]:
        return [i for i in range(len(self)) if i % TEST_EVERY != 0]


def camera_from_c2w(c2w_gl, camera_angle_x: float, width: int, height: int) -> Camera:
    c2w = np.asarray(c2w_gl, dtype=np.float64)
    if c2w.shape != (4, 4) or not np.all(np.isfinite(c2w)):
        raise PoseError("transform_matrix must be a finite 4x4 matrix")
    if abs(np.linalg.det(c2w[:3, :3])) < 1e-9:
        raise PoseError("transform_matrix is not invertible")
    w2c = np.linalg.inv(c2w @ GL_TO_CV)
    focal = 0.5 * width / math.tan(0.5 * camera_angle_x)
    try:
        return Camera(width, height, focal, focal, width / 2.0, height / 2.0, w2c)
    except ValueError as exc:
        raise PoseError(str(exc)) from exc


def camera_to_c2w(cam: Camera) -> np.ndarray:
    return np.linalg.inv(cam.world_to_camera) @ GL_TO_CV


def read_image(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            arr = np.asarray(im.convert("RGBA" if "A" in mode else "RGB"), dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise ImageReadError(f"cannot read image {path}: {exc}") from exc
    if arr.shape[-1] == 4:
        # composite over black
        arr = arr[..., :3] * arr[..., 3:4]
    return arr


def write_image(path, image: np.ndarray) -> None:
    data = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path)


def _resolve_image(root: Path, file_path: str) -> Path:
    p = root / file_path
    if p.suffix.lower() != ".png" and not p.exists():
        p = p.with_name(p.name + ".png")
    return p


def load_dataset(path, prefer_raw: bool = True) -> Dataset:
    """Load a ``transforms.json`` dataset.

    With ``prefer_raw`` an ``<image>.npy`` float dump next to a PNG is used
    instead of the 8-bit file.
    """
    root = Path(path)
    manifest_path = root / MANIFEST
    if not manifest_path.is_file():
        raise ManifestError(f"no {MANIFEST} in {root}")
    try:
        meta = json.loads(manifest_path.read_text())
        angle = float(meta["camera_angle_x"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ManifestError(f"malformed manifest {manifest_path}: {exc}") from exc
    frames = meta.get("frames") or []
    if not frames:
        raise EmptyDatasetError(f"{manifest_path} lists no frames")

    cameras, images = [], []
    for frame in frames:
        try:
            img_path = _resolve_image(root, frame["file_path"])
            c2w = frame["transform_matrix"]
        except (KeyError, TypeError) as exc:
            raise ManifestError(f"malformed frame entry: {exc}") from exc
        raw_path = img_path.with_suffix(".npy")
        if prefer_raw and raw_path.is_file():
            image = np.load(raw_path).astype(np.float64)
        else:
            image = read_image(img_path)
        h, w = image.shape[:2]
        cameras.append(camera_from_c2w(c2w, angle, w, h))
        images.append(image)

    points_path = root / POINTS_FILE
    if points_path.is_file():
        try:
            points, colors = read_points(points_path)
        except PlyError as exc:
            raise DatasetError(f"bad point cloud {points_path}: {exc}") from exc
    else:
        points, colors = np.zeros((0, 3)), np.zeros((0, 3))
    return Dataset(cameras, images, points, colors, angle)


def save_dataset(dataset: Dataset, path, raw: bool = True) -> None:
    """Write a dataset in the layout :func:`load_dataset` reads."""
    from .ply import write_points

    root = Path(path)
    (root / "images").mkdir(parents=True, exist_ok=True)
    if dataset.camera_angle_x is None:
        raise DatasetError("camera_angle_x is required to write a manifest")
    frames = []
    for i, (cam, image) in enumerate(zip(dataset.cameras, dataset.images)):
        rel = f"images/frame_{i:04d}.png"
        write_image(root / rel, image)
        if raw:
            np.save(root / f"images/frame_{i:04d}.npy", image)
        frames.append({"file_path": rel, "transform_matrix": camera_to_c2w(cam).tolist()})
    manifest = {"camera_angle_x": dataset.camera_angle_x, "frames": frames}
    (root / MANIFEST).write_text(json.dumps(manifest, indent=2))
    write_points(root / POINTS_FILE, dataset.init_points, dataset.init_colors)


def scene_extent(cameras: list[Camera]) -> float:
    """Radius of the camera-center bounding sphere, times 1.1."""
    centers = np.array([c.center for c in cameras])
    mid = centers.mean(axis=0)
    radius = float(np.max(np.linalg.norm(centers - mid, axis=1))) if len(centers) else 0.0
    return 1.1 * (radius if radius > 0 else 1.0)


def init_gaussians(
    points: np.ndarray,
    colors: np.ndarray,
    n_random_fallback: int = 10_000,
    seed: int = 0,
    sh_degree: int = 3,
    bounds: tuple = ((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0)),
    initial_opacity: float = 0.1,
) -> GaussianSet:
    """One isotropic Gaussian per point, sized by its 3 nearest neighbors.

    Without points, ``n_random_fallback`` positions are drawn uniformly in
    ``bounds`` with random colors.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
    if points.shape[0] == 0:
        rng = np.random.default_rng(seed)
        lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
        points = rng.uniform(lo, hi, size=(n_random_fallback, 3))
        colors = rng.uniform(0.0, 1.0, size=(n_random_fallback, 3))
    n = points.shape[0]
    if n >= 2:
        k = min(3, n - 1)
        dist, _ = cKDTree(points).query(points, k=k + 1)
        mean_dist = np.asarray(dist).reshape(n, k + 1)[:, 1:].mean(axis=1)
    else:
        # a lone point has no neighbors to size it by
        mean_dist = np.full(n, 0.01)
    log_scale = np.log(np.maximum(mean_dist, 1e-7))
    sh = np.zeros((n, 3, num_sh_bases(sh_degree)))
    sh[:, :, 0] = rgb_to_dc(colors)
    rotations = np.zeros((n, 4))
    rotations[:, 0] = 1.0
    return GaussianSet(
        positions=points.copy(),
        log_scales=np.repeat(log_scale[:, None], 3, axis=1),
        rotations=rotations,
        opacity_logits=np.full((n, 1), float(logit(initial_opacity))),
        sh_coeffs=sh,
    )
