"""Uniform octree-style splitting with attribute inheritance."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .core import GaussianSet, TopologyEdit, inverse_activate, normalize_quaternions, quaternion_to_rotation, sigmoid

SCALE_SHRINK = 1.6
CHILD_OFFSET = 0.25
# fixed child ordering: sign patterns of (x, y, z)
OFFSETS = CHILD_OFFSET * np.array(list(itertools.product((-1.0, 1.0), repeat=3)))
MAX_PARENT_OPACITY = 1.0 - 1e-6


def child_opacity(parent_alpha):
    """Opacity that makes two stacked children composite to the parent's."""
    parent_alpha = np.minimum(np.asarray(parent_alpha, dtype=np.float64), MAX_PARENT_OPACITY)
    return 1.0 - np.sqrt(1.0 - parent_alpha)


def split_activated(positions, scales, quaternions, opacities):
    """Split parents given in activated space into 8 children each.

    Returns (positions, scales, opacities) of shape (8P, ...), ordered parent
    by parent and, within a parent, in ``OFFSETS`` order.
    """
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    scales = np.asarray(scales, dtype=np.float64).reshape(-1, 3)
    rot = quaternion_to_rotation(normalize_quaternions(np.asarray(quaternions, dtype=np.float64).reshape(-1, 4)))
    local = OFFSETS[None, :, :] * scales[:, None, :]
    child_pos = positions[:, None, :] + np.einsum("pij,pkj->pki", rot, local)
    child_scales = np.repeat(scales / SCALE_SHRINK, 8, axis=0)
    child_alpha = np.repeat(child_opacity(np.asarray(opacities).reshape(-1)), 8)
    return child_pos.reshape(-1, 3), child_scales, child_alpha


def split_one(position, scale, quaternion, opacity):
    """Children of a single activated parent; see :func:`split_activated`."""
    return split_activated(position, scale, quaternion, [opacity])


@dataclass
class SplitBatchCursor:
    pending_ids: np.ndarray
    batch_size: int

    @classmethod
    def start(cls, gaussians: GaussianSet, batch_size: int, rng: np.random.Generator) -> SplitBatchCursor:
        if batch_size < 1:
            raise ValueError("batch_size must be positive")
        return cls(rng.permutation(gaussians.ids), int(batch_size))

    @property
    def has_next(self) -> bool:
        return self.pending_ids.size > 0


def split_indices(gaussians: GaussianSet, parent_idx: np.ndarray) -> TopologyEdit:
    """Replace the Gaussians at ``parent_idx`` by their children (appended)."""
    parent_idx = np.asarray(parent_idx, dtype=np.int64)
    n_before = len(gaussians)
    pos, scales, alpha = split_activated(
        gaussians.positions[parent_idx],
        np.exp(gaussians.log_scales[parent_idx]),
        gaussians.rotations[parent_idx],
        sigmoid(gaussians.opacity_logits[parent_idx, 0]),
    )
    logits, log_scales = inverse_activate(alpha, scales)
    rotations = np.repeat(gaussians.rotations[parent_idx], 8, axis=0)
    sh = np.repeat(gaussians.sh_coeffs[parent_idx], 8, axis=0)

    keep = np.ones(n_before, dtype=bool)
    keep[parent_idx] = False
    gaussians.keep(keep)
    gaussians.append(pos, log_scales, rotations, logits[:, None], sh)
    return TopologyEdit(keep, 8 * parent_idx.size)


def issue_batch(cursor: SplitBatchCursor, gaussians: GaussianSet) -> tuple[TopologyEdit, bool]:
    """Split the next batch of still-alive pending parents.

    IDs that were pruned since the round started are dropped silently.
    Returns the topology edit and whether more batches remain.
    """
    alive = np.isin(cursor.pending_ids, gaussians.ids)
    pending = cursor.pending_ids[alive]
    batch, cursor.pending_ids = pending[: cursor.batch_size], pending[cursor.batch_size :]
    order = np.argsort(gaussians.ids, kind="stable")
    parent_idx = order[np.searchsorted(gaussians.ids, batch, sorter=order)]
    edit = split_indices(gaussians, parent_idx)
    return edit, cursor.has_next
