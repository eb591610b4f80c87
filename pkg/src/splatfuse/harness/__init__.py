"""Synthetic scenes, the two-phase training loop, k statistics and ablations."""

from .ablate import DEFAULT_VARIANTS, AblationRow, ablate, format_table, variant_config
from .config import (ConfigError, ObjectSpec, RunConfig, SceneSpec, format_config, load_run_config,
                     load_scene_spec, run_config_from_text, scene_spec_from_text)
from .presets import PRESETS, preset
from .scene import Scene, generate_scene, load_scene, save_scene
from .stats import KTable, k_stats, k_table
from .train import MetricsReport, Networks, after_loss, prepare_inputs, rgb_loss, train

__all__ = [
    "DEFAULT_VARIANTS", "AblationRow", "ablate", "format_table", "variant_config", "ConfigError",
    "ObjectSpec", "RunConfig", "SceneSpec", "format_config", "load_run_config", "load_scene_spec",
    "run_config_from_text", "scene_spec_from_text", "PRESETS", "preset", "Scene", "generate_scene",
    "load_scene", "save_scene", "KTable", "k_stats", "k_table", "MetricsReport", "Networks",
    "after_loss", "prepare_inputs", "rgb_loss", "train",
]
