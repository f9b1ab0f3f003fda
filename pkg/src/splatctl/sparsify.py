"""Hard opacity-threshold pruning."""

from __future__ import annotations

import numpy as np

from .core import GaussianSet, TopologyEdit, sigmoid


def prune(gaussians: GaussianSet, tau_alpha: float) -> tuple[int, TopologyEdit]:
    """Remove every Gaussian with activated opacity strictly below ``tau_alpha``.

    Survivors keep their relative order. Returns the removal count and the
    edit needed to keep optimizer state aligned.
    """
    if not 0.0 < tau_alpha < 1.0:
        raise ValueError("tau_alpha must lie in (0, 1)")
    keep = sigmoid(gaussians.opacity_logits[:, 0]) >= tau_alpha
    n_removed = int(keep.size - np.count_nonzero(keep))
    if n_removed:
        gaussians.keep(keep)
    return n_removed, TopologyEdit(keep, 0)
