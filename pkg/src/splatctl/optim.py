"""Adam over the Gaussian parameter groups, LR schedule and SH promotion."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import PARAM_NAMES, GaussianSet, TopologyEdit


@dataclass
class OptimConfig:
    position_lr_init: float = 1.6e-4
    position_lr_final: float = 1.6e-6
    scaling_lr: float = 5e-3
    rotation_lr: float = 1e-3
    opacity_lr: float = 5e-2
    sh_dc_lr: float = 2.5e-3
    sh_rest_lr: float = 2.5e-3 / 20.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-15
    sh_interval: int = 1000
    max_sh_degree: int = 3


def position_lr(t: int, lr_init: float, lr_final: float, t_max: int) -> float:
    """Log-linear interpolation from ``lr_init`` (t=0) to ``lr_final`` (t=t_max)."""
    if t < 0:
        raise ValueError("iteration must be nonnegative")
    frac = min(max(t / t_max, 0.0), 1.0) if t_max > 0 else 1.0
    return math.exp((1.0 - frac) * math.log(lr_init) + frac * math.log(lr_final))


@dataclass
class OptimState:
    """Adam moments aligned row-for-row with a :class:`GaussianSet`."""

    exp_avg: dict[str, np.ndarray]
    exp_avg_sq: dict[str, np.ndarray]
    step: int = 0
    lr: dict[str, float] = field(default_factory=dict)

    @classmethod
    def for_gaussians(cls, gaussians: GaussianSet) -> OptimState:
        params = gaussians.parameters()
        return cls(
            exp_avg={k: np.zeros_like(v) for k, v in params.items()},
            exp_avg_sq={k: np.zeros_like(v) for k, v in params.items()},
        )

    def __len__(self) -> int:
        return self.exp_avg["positions"].shape[0]


def group_learning_rates(cfg: OptimConfig, t: int, t_max: int, scene_extent: float) -> dict[str, float]:
    return {
        "positions": position_lr(
            t, cfg.position_lr_init * scene_extent, cfg.position_lr_final * scene_extent, t_max
        ),
        "log_scales": cfg.scaling_lr,
        "rotations": cfg.rotation_lr,
        "opacity_logits": cfg.opacity_lr,
        "sh_dc": cfg.sh_dc_lr,
        "sh_rest": cfg.sh_rest_lr,
    }


def _lr_array(name: str, lrs: dict[str, float], shape) -> float | np.ndarray:
    if name != "sh_coeffs":
        return lrs[name]
    lr = np.full(shape[1:], lrs["sh_rest"])
    lr[:, 0] = lrs["sh_dc"]
    return lr


def adam_step(
    gaussians: GaussianSet,
    grads: dict[str, np.ndarray],
    state: OptimState,
    lrs: dict[str, float],
    cfg: OptimConfig | None = None,
) -> None:
    """One bias-corrected Adam update of every parameter group, in place."""
    cfg = cfg or OptimConfig()
    params = gaussians.parameters()
    for name in PARAM_NAMES:
        if grads[name].shape != params[name].shape:
            raise ValueError(f"gradient for {name} has shape {grads[name].shape}, expected {params[name].shape}")
        if state.exp_avg[name].shape != params[name].shape:
            raise ValueError(f"optimizer state for {name} is out of sync with the Gaussian set")
    state.step += 1
    state.lr = dict(lrs)
    bc1 = 1.0 - cfg.beta1**state.step
    bc2 = 1.0 - cfg.beta2**state.step
    for name in PARAM_NAMES:
        g = grads[name]
        m = state.exp_avg[name]
        v = state.exp_avg_sq[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        lr = _lr_array(name, lrs, params[name].shape)
        params[name] -= lr / bc1 * m / (np.sqrt(v / bc2) + cfg.eps)


def sync_topology(state: OptimState, edit: TopologyEdit) -> OptimState:
    """Apply a structural edit to the moments: drop removed rows, append
    zero moments for new ones."""
    if edit.keep.shape != (len(state),):
        raise ValueError(f"edit covers {edit.keep.size} Gaussians, optimizer tracks {len(state)}")
    if edit.n_added < 0:
        raise ValueError("n_added must be nonnegative")
    for moments in (state.exp_avg, state.exp_avg_sq):
        for name, arr in moments.items():
            kept = arr[edit.keep]
            if edit.n_added:
                kept = np.concatenate([kept, np.zeros((edit.n_added,) + arr.shape[1:])])
            moments[name] = kept
    return state


def maybe_promote_sh(gaussians: GaussianSet, t: int, cfg: OptimConfig | None = None) -> GaussianSet:
    """Raise the active SH degree by one every ``sh_interval`` iterations."""
    cfg = cfg or OptimConfig()
    limit = min(cfg.max_sh_degree, gaussians.max_sh_degree)
    if t > 0 and t % cfg.sh_interval == 0 and gaussians.active_sh_degree < limit:
        gaussians.active_sh_degree += 1
    return gaussians
