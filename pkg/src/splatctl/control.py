"""Prune/split/shutoff scheduler driving structural compression.

One :func:`step` call per training iteration, after the parameter update:

* on prune steps (``t % prune_interval == 0`` and ``t >= t_until``) prune
  low-opacity Gaussians;
* if that removed fewer than ``tau_remove`` Gaussians, or a split round is
  still in progress, either split the next batch (delaying the next prune by
  ``t_delay``) or, once ``tau_split`` rounds are done, zero the opacity
  regularization weight for the rest of the run.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import GaussianSet, TopologyEdit
from .densify import SplitBatchCursor, issue_batch
from .sparsify import prune

log = logging.getLogger(__name__)

FULL_SCALE_TAU_REMOVE = 2000
FULL_SCALE_N_BATCH = 100_000
FULL_SCALE_REFERENCE_COUNT = 100_000


@dataclass
class ControlConfig:
    prune_interval: int = 100
    tau_alpha: float = 0.005
    tau_remove: int = FULL_SCALE_TAU_REMOVE
    n_batch: int = FULL_SCALE_N_BATCH
    t_delay: int = 200
    tau_split: int = 6
    t_max: int = 30_000

    def __post_init__(self):
        if self.prune_interval < 1 or self.n_batch < 1 or self.t_max < 1:
            raise ValueError("prune_interval, n_batch and t_max must be positive")
        if self.tau_remove < 0 or self.t_delay < 0 or self.tau_split < 0:
            raise ValueError("tau_remove, t_delay and tau_split must be nonnegative")
        if not 0.0 < self.tau_alpha < 1.0:
            raise ValueError("tau_alpha must lie in (0, 1)")


def desk_counts(n_init: int) -> tuple[int, int]:
    """(tau_remove, n_batch) rescaled from the full-scale defaults to ``n_init``."""
    ratio = n_init / FULL_SCALE_REFERENCE_COUNT
    return max(20, round(FULL_SCALE_TAU_REMOVE * ratio)), max(500, round(FULL_SCALE_N_BATCH * ratio))


@dataclass
class ControlState:
    lambda_alpha: float
    t: int = 0
    n_split: int = 0
    t_until: int = 0
    has_next_batch: bool = False
    cursor: SplitBatchCursor | None = None
    live_lambda_alpha: float = field(default=None)
    lambda_disabled: bool = False

    def __post_init__(self):
        if self.live_lambda_alpha is None:
            self.live_lambda_alpha = self.lambda_alpha


@dataclass
class Event:
    iteration: int
    kind: str  # "pruned" | "split_batch" | "lambda_disabled"
    n_removed: int
    n_gaussians: int
    lambda_alpha: float
    edit: TopologyEdit | None = None
    round_complete: bool = False
    # smallest activated opacity right after a prune (nan if the set is empty)
    min_opacity: float = float("nan")


PruneFn = Callable[[GaussianSet, float], "tuple[int, TopologyEdit]"]


def is_prune_step(state: ControlState, cfg: ControlConfig) -> bool:
    return state.t % cfg.prune_interval == 0 and state.t >= state.t_until


def step(
    state: ControlState,
    cfg: ControlConfig,
    gaussians: GaussianSet,
    rng: np.random.Generator,
    prune_fn: PruneFn = prune,
) -> list[Event]:
    """Advance the scheduler by one iteration, mutating ``gaussians``.

    Returned events carry the topology edits in the order they were applied.
    """
    events: list[Event] = []
    if is_prune_step(state, cfg):
        n_removed, edit = prune_fn(gaussians, cfg.tau_alpha)
        floor = float(gaussians.opacities.min()) if len(gaussians) else float("nan")
        events.append(
            Event(state.t, "pruned", n_removed, len(gaussians), state.live_lambda_alpha, edit, min_opacity=floor)
        )
        if n_removed < cfg.tau_remove or state.has_next_batch:
            if state.n_split < cfg.tau_split:
                if state.cursor is None:
                    state.cursor = SplitBatchCursor.start(gaussians, cfg.n_batch, rng)
                edit, state.has_next_batch = issue_batch(state.cursor, gaussians)
                state.t_until = state.t + cfg.t_delay
                events.append(
                    Event(
                        state.t, "split_batch", 0, len(gaussians), state.live_lambda_alpha, edit,
                        round_complete=not state.has_next_batch,
                    )
                )
            elif not state.lambda_disabled:
                state.live_lambda_alpha = 0.0
                state.lambda_disabled = True
                events.append(Event(state.t, "lambda_disabled", 0, len(gaussians), 0.0))
            if not state.has_next_batch and state.cursor is not None:
                state.n_split += 1
                state.cursor = None
    for ev in events:
        log.debug("t=%d %s removed=%d N=%d lambda=%g", ev.iteration, ev.kind, ev.n_removed, ev.n_gaussians, ev.lambda_alpha)
    state.t += 1
    return events
