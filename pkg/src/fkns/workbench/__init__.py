"""Configuration, persistence, CLI, and report emission for reproducible experiments."""

from .config import DEFAULTS, ConfigError, config_hash, format_config, load_config
from .checkpoint import (
    CheckpointError,
    load_checkpoint,
    save_eigen,
    save_ensemble,
    save_trajectory,
)
from .manifest import RunFolder, RunManifest, write_csv
