"""Flat run configuration.

The text form is one ``key = value`` per line; ``#`` starts a comment and
``none`` / ``auto`` map to None. Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass
from pathlib import Path

from ..control import ControlConfig, desk_counts
from ..loss import LossConfig
from ..optim import OptimConfig
from ..render import RasterSettings


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # data
    dataset: str | None = None
    prefer_raw: bool = True
    synth_k: int = 64
    synth_views: int = 28
    synth_resolution: int = 128
    n_random_fallback: int = 10_000
    seed: int = 42
    out_dir: str | None = None
    profile: str = "desk"
    # loss
    lambda_w: float = 0.2
    lambda_alpha: float = 1e-5
    # schedule
    t_max: int = 8000
    prune_interval: int = 100
    tau_alpha: float = 0.005
    tau_remove: int | None = None
    n_batch: int | None = None
    t_delay: int = 200
    tau_split: int = 6
    checkpoint_interval: int = 500
    save_checkpoints: bool = True
    # optimizer
    position_lr_init: float = 1.6e-4
    position_lr_final: float = 1.6e-6
    scaling_lr: float = 5e-3
    rotation_lr: float = 1e-3
    opacity_lr: float = 5e-2
    sh_dc_lr: float = 2.5e-3
    sh_rest_lr: float = 2.5e-3 / 20.0
    sh_interval: int = 1000
    max_sh_degree: int = 3
    # rasterizer
    dilation: float = 0.3
    alpha_max: float = 0.99
    alpha_min: float = 1.0 / 255.0
    transmittance_min: float = 1e-4

    def __post_init__(self):
        if self.profile not in ("desk", "full"):
            raise ConfigError(f"profile must be 'desk' or 'full', got {self.profile!r}")
        if self.t_max < 1 or self.checkpoint_interval < 1:
            raise ConfigError("t_max and checkpoint_interval must be positive")
        if not 0 <= self.max_sh_degree <= 3:
            raise ConfigError("max_sh_degree must be in [0, 3]")
        # surface component-level range errors at construction time
        try:
            self.loss_config()
            self.control_config(1)
            self.optim_config()
            self.raster_settings()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def loss_config(self, lambda_alpha: float | None = None) -> LossConfig:
        return LossConfig(
            lambda_w=self.lambda_w,
            lambda_alpha=self.lambda_alpha if lambda_alpha is None else lambda_alpha,
        )

    def control_config(self, n_init: int) -> ControlConfig:
        if self.profile == "desk":
            tau_remove, n_batch = desk_counts(n_init)
        else:
            tau_remove, n_batch = ControlConfig.tau_remove, ControlConfig.n_batch
        return ControlConfig(
            prune_interval=self.prune_interval,
            tau_alpha=self.tau_alpha,
            tau_remove=tau_remove if self.tau_remove is None else self.tau_remove,
            n_batch=n_batch if self.n_batch is None else self.n_batch,
            t_delay=self.t_delay,
            tau_split=self.tau_split,
            t_max=self.t_max,
        )

    def optim_config(self) -> OptimConfig:
        return OptimConfig(
            position_lr_init=self.position_lr_init,
            position_lr_final=self.position_lr_final,
            scaling_lr=self.scaling_lr,
            rotation_lr=self.rotation_lr,
            opacity_lr=self.opacity_lr,
            sh_dc_lr=self.sh_dc_lr,
            sh_rest_lr=self.sh_rest_lr,
            sh_interval=self.sh_interval,
            max_sh_degree=self.max_sh_degree,
        )

    def raster_settings(self) -> RasterSettings:
        return RasterSettings(
            dilation=self.dilation,
            alpha_max=self.alpha_max,
            alpha_min=self.alpha_min,
            transmittance_min=self.transmittance_min,
        )

    def replace(self, **changes) -> RunConfig:
        return dataclasses.replace(self, **changes)


def _field_types() -> dict[str, typing.Any]:
    return typing.get_type_hints(RunConfig)


def _base_type(tp):
    args = [a for a in typing.get_args(tp) if a is not type(None)]
    return (args[0], True) if args else (tp, False)


def parse_value(key: str, text: str):
    types = _field_types()
    if key not in types:
        raise ConfigError(f"unknown config key {key!r}")
    tp, optional = _base_type(types[key])
    text = text.strip()
    if optional and text.lower() in ("none", "auto", ""):
        return None
    try:
        if tp is bool:
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if tp is int:
            return int(text)
        if tp is float:
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r}") from exc


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = parse_value(key, value)
    try:
        return dataclasses.replace(base or RunConfig(), **values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


def format_config(cfg: RunConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        lines.append(f"{f.name} = {'none' if value is None else value}")
    return "\n".join(lines) + "\n"
