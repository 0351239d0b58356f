"""Configuration, checkpoints, metric/trajectory records and SVG plots."""

from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig, dump_toml, load_config
from .records import (append_metrics, read_metrics, read_snapshot, read_trajectories,
                      write_snapshot, write_trajectories)
from .svg import PALETTE, emit_svg, skill_color

__all__ = [
    "Checkpoint", "CheckpointError", "load_checkpoint", "save_checkpoint",
    "ConfigError", "ExperimentConfig", "dump_toml", "load_config",
    "append_metrics", "read_metrics", "read_snapshot", "read_trajectories",
    "write_snapshot", "write_trajectories",
    "PALETTE", "emit_svg", "skill_color",
]
