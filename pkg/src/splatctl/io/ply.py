"""Binary little-endian PLY for Gaussian sets and plain colored point clouds.

Gaussian files follow the usual splatting layout (x y z nx ny nz f_dc_*
f_rest_* opacity scale_* rot_*) with raw pre-activation values. Properties
are written as ``double`` so a round trip is bit-exact; ``float`` files are
accepted on import.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from ..core import GaussianSet, num_sh_bases


class PlyError(ValueError):
    pass


class PlyHeaderError(PlyError):
    """The header is not a well-formed binary little-endian PLY header."""


class PlyPropertyError(PlyError):
    """The vertex properties do not match the expected layout."""


class PlyTruncatedError(PlyError):
    """The payload is shorter than the header announces."""


_TYPES = {
    "float": "<f4",
    "float32": "<f4",
    "double": "<f8",
    "float64": "<f8",
    "uchar": "u1",
    "uint8": "u1",
    "int": "<i4",
    "int32": "<i4",
}


def gaussian_property_names(sh_degree: int) -> list[str]:
    n_rest = 3 * (num_sh_bases(sh_degree) - 1)
    names = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
    names += [f"f_rest_{i}" for i in range(n_rest)]
    names += ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    return names


def _write(path, props: list[tuple[str, str]], data: np.ndarray, comments=()) -> None:
    lines = ["ply", "format binary_little_endian 1.0"]
    lines += [f"comment {c}" for c in comments]
    lines.append(f"element vertex {data.shape[0]}")
    lines += [f"property {t} {name}" for name, t in props]
    lines.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        fh.write(data.tobytes())


def _read(path) -> tuple[list[tuple[str, str]], np.ndarray, list[str]]:
    raw = Path(path).read_bytes()
    marker = b"end_header\n"
    end = raw.find(marker)
    if not raw.startswith(b"ply\n") or end < 0:
        raise PlyHeaderError(f"{path}: not a PLY file")
    header = raw[: end].decode("ascii", errors="replace").splitlines()
    body = raw[end + len(marker) :]
    if len(header) < 2 or header[1].strip() != "format binary_little_endian 1.0":
        raise PlyHeaderError(f"{path}: only binary_little_endian 1.0 is supported")
    count = None
    props: list[tuple[str, str]] = []
    comments = []
    for line in header[2:]:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "comment":
            comments.append(line[len("comment ") :])
        elif parts[0] == "element":
            if count is not None or len(parts) != 3 or parts[1] != "vertex":
                raise PlyHeaderError(f"{path}: expected a single vertex element")
            try:
                count = int(parts[2])
            except ValueError as exc:
                raise PlyHeaderError(f"{path}: bad vertex count {parts[2]!r}") from exc
        elif parts[0] == "property":
            if count is None or len(parts) != 3 or parts[1] not in _TYPES:
                raise PlyHeaderError(f"{path}: unsupported property line {line!r}")
            props.append((parts[2], _TYPES[parts[1]]))
        else:
            raise PlyHeaderError(f"{path}: unexpected header line {line!r}")
    if count is None or count < 0:
        raise PlyHeaderError(f"{path}: missing vertex element")
    dtype = np.dtype(props)
    need = count * dtype.itemsize
    if len(body) < need:
        raise PlyTruncatedError(f"{path}: expected {need} payload bytes, found {len(body)}")
    return props, np.frombuffer(body[:need], dtype=dtype, count=count), comments


def export_ply(gaussians: GaussianSet, path) -> None:
    names = gaussian_property_names(gaussians.max_sh_degree)
    n = len(gaussians)
    sh = gaussians.sh_coeffs
    cols = np.concatenate(
        [
            gaussians.positions,
            np.zeros((n, 3)),
            sh[:, :, 0],
            sh[:, :, 1:].reshape(n, 3 * (sh.shape[2] - 1)),
            gaussians.opacity_logits,
            gaussians.log_scales,
            gaussians.rotations,
        ],
        axis=1,
    )
    data = np.ascontiguousarray(cols, dtype="<f8")
    _write(path, [(name, "double") for name in names], data, [f"active_sh_degree {gaussians.active_sh_degree}"])


def import_ply(path) -> GaussianSet:
    props, data, comments = _read(path)
    names = [p[0] for p in props]
    n_rest = sum(1 for name in names if name.startswith("f_rest_"))
    if n_rest % 3:
        raise PlyPropertyError(f"{path}: f_rest count {n_rest} is not a multiple of 3")
    degree = int(round(np.sqrt(n_rest // 3 + 1))) - 1
    if num_sh_bases(degree) - 1 != n_rest // 3:
        raise PlyPropertyError(f"{path}: f_rest count {n_rest} matches no SH degree")
    expected = gaussian_property_names(degree)
    if names != expected:
        raise PlyPropertyError(f"{path}: property layout differs from the Gaussian layout")
    if any(np.dtype(t).kind != "f" for _, t in props):
        raise PlyPropertyError(f"{path}: Gaussian properties must be floating point")
    n = data.shape[0]
    table = np.empty((n, len(names)))
    for j, name in enumerate(names):
        table[:, j] = data[name]
    b = num_sh_bases(degree)
    sh = np.empty((n, 3, b))
    sh[:, :, 0] = table[:, 6:9]
    sh[:, :, 1:] = table[:, 9 : 9 + n_rest].reshape(n, 3, b - 1)
    k = 9 + n_rest
    active = degree
    for c in comments:
        m = re.fullmatch(r"active_sh_degree (\d+)", c.strip())
        if m:
            active = min(int(m.group(1)), degree)
    return GaussianSet(
        positions=table[:, 0:3],
        log_scales=table[:, k + 1 : k + 4],
        rotations=table[:, k + 4 : k + 8],
        opacity_logits=table[:, k : k + 1],
        sh_coeffs=sh,
        active_sh_degree=active,
    )


def write_points(path, points: np.ndarray, colors: np.ndarray) -> None:
    """Colored point cloud with ``double`` positions and ``uchar`` RGB."""
    n = points.shape[0]
    dtype = np.dtype([("x", "<f8"), ("y", "<f8"), ("z", "<f8"), ("red", "u1"), ("green", "u1"), ("blue", "u1")])
    data = np.empty(n, dtype=dtype)
    data["x"], data["y"], data["z"] = points.T
    rgb = np.clip(np.round(np.asarray(colors) * 255.0), 0, 255).astype(np.uint8)
    data["red"], data["green"], data["blue"] = rgb.T
    props = [("x", "double"), ("y", "double"), ("z", "double"), ("red", "uchar"), ("green", "uchar"), ("blue", "uchar")]
    _write(path, props, data)


def read_points(path) -> tuple[np.ndarray, np.ndarray]:
    props, data, _ = _read(path)
    names = [p[0] for p in props]
    for required in ("x", "y", "z", "red", "green", "blue"):
        if required not in names:
            raise PlyPropertyError(f"{path}: point cloud lacks property {required!r}")
    points = np.stack([data["x"], data["y"], data["z"]], axis=1).astype(np.float64)
    colors = np.stack([data["red"], data["green"], data["blue"]], axis=1).astype(np.float64) / 255.0
    return points, colors
