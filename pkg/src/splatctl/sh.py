"""Real spherical-harmonic basis (degree <= 3) and its directional derivative.

Coefficient layout is ``(N, 3, B)``: channel-major with the DC band first.
Colors are shifted by +0.5 so a zero DC coefficient renders mid-gray.
"""

import numpy as np

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

MAX_DEGREE = 3


def rgb_to_dc(rgb):
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / C0


def dc_to_rgb(dc):
    return np.asarray(dc, dtype=np.float64) * C0 + 0.5


def sh_basis(degree: int, dirs: np.ndarray, with_grad: bool = False):
    """Evaluate the first ``(degree+1)**2`` basis functions at ``dirs``.

    Returns ``basis`` of shape (N, B) and, with ``with_grad``, the partial
    derivatives w.r.t. the (unnormalized) x, y, z inputs, shape (N, B, 3).
    """
    if not 0 <= degree <= MAX_DEGREE:
        raise ValueError(f"SH degree must be in [0, {MAX_DEGREE}]")
    dirs = np.asarray(dirs, dtype=np.float64)
    n = dirs.shape[0]
    nb = (degree + 1) ** 2
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    basis = np.zeros((n, nb))
    grad = np.zeros((n, nb, 3)) if with_grad else None
    basis[:, 0] = C0
    if degree >= 1:
        basis[:, 1] = -C1 * y
        basis[:, 2] = C1 * z
        basis[:, 3] = -C1 * x
        if with_grad:
            grad[:, 1, 1] = -C1
            grad[:, 2, 2] = C1
            grad[:, 3, 0] = -C1
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        basis[:, 4] = C2[0] * x * y
        basis[:, 5] = C2[1] * y * z
        basis[:, 6] = C2[2] * (2 * zz - xx - yy)
        basis[:, 7] = C2[3] * x * z
        basis[:, 8] = C2[4] * (xx - yy)
        if with_grad:
            grad[:, 4, 0] = C2[0] * y
            grad[:, 4, 1] = C2[0] * x
            grad[:, 5, 1] = C2[1] * z
            grad[:, 5, 2] = C2[1] * y
            grad[:, 6, 0] = -2 * C2[2] * x
            grad[:, 6, 1] = -2 * C2[2] * y
            grad[:, 6, 2] = 4 * C2[2] * z
            grad[:, 7, 0] = C2[3] * z
            grad[:, 7, 2] = C2[3] * x
            grad[:, 8, 0] = 2 * C2[4] * x
            grad[:, 8, 1] = -2 * C2[4] * y
    if degree >= 3:
        basis[:, 9] = C3[0] * y * (3 * xx - yy)
        basis[:, 10] = C3[1] * x * y * z
        basis[:, 11] = C3[2] * y * (4 * zz - xx - yy)
        basis[:, 12] = C3[3] * z * (2 * zz - 3 * xx - 3 * yy)
        basis[:, 13] = C3[4] * x * (4 * zz - xx - yy)
        basis[:, 14] = C3[5] * z * (xx - yy)
        basis[:, 15] = C3[6] * x * (xx - 3 * yy)
        if with_grad:
            grad[:, 9, 0] = C3[0] * 6 * x * y
            grad[:, 9, 1] = C3[0] * (3 * xx - 3 * yy)
            grad[:, 10, 0] = C3[1] * y * z
            grad[:, 10, 1] = C3[1] * x * z
            grad[:, 10, 2] = C3[1] * x * y
            grad[:, 11, 0] = -2 * C3[2] * x * y
            grad[:, 11, 1] = C3[2] * (4 * zz - xx - 3 * yy)
            grad[:, 11, 2] = 8 * C3[2] * y * z
            grad[:, 12, 0] = -6 * C3[3] * x * z
            grad[:, 12, 1] = -6 * C3[3] * y * z
            grad[:, 12, 2] = C3[3] * (6 * zz - 3 * xx - 3 * yy)
            grad[:, 13, 0] = C3[4] * (4 * zz - 3 * xx - yy)
            grad[:, 13, 1] = -2 * C3[4] * x * y
            grad[:, 13, 2] = 8 * C3[4] * x * z
            grad[:, 14, 0] = 2 * C3[5] * x * z
            grad[:, 14, 1] = -2 * C3[5] * y * z
            grad[:, 14, 2] = C3[5] * (xx - yy)
            grad[:, 15, 0] = C3[6] * (3 * xx - 3 * yy)
            grad[:, 15, 1] = -6 * C3[6] * x * y
    return basis, grad


def eval_sh(degree: int, sh: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Raw SH color (before the +0.5 shift) for unit ``dirs``; shape (N, 3)."""
    basis, _ = sh_basis(degree, dirs)
    nb = basis.shape[1]
    return np.einsum("ncb,nb->nc", sh[:, :, :nb], basis)
