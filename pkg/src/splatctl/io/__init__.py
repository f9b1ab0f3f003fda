from .config import ConfigError, RunConfig, format_config, load_config, parse_config
from .dataset import (
    Dataset,
    DatasetError,
    EmptyDatasetError,
    ImageReadError,
    ManifestError,
    PoseError,
    init_gaussians,
    load_dataset,
    save_dataset,
    scene_extent,
)
from .ply import PlyError, PlyHeaderError, PlyPropertyError, PlyTruncatedError, export_ply, import_ply
from .synth import synth_scene

__all__ = [
    "ConfigError",
    "Dataset",
    "DatasetError",
    "EmptyDatasetError",
    "ImageReadError",
    "ManifestError",
    "PlyError",
    "PlyHeaderError",
    "PlyPropertyError",
    "PlyTruncatedError",
    "PoseError",
    "RunConfig",
    "export_ply",
    "format_config",
    "import_ply",
    "init_gaussians",
    "load_config",
    "load_dataset",
    "parse_config",
    "save_dataset",
    "scene_extent",
    "synth_scene",
]
