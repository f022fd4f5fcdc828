"""Optimization: Adam, density control and the two training stages."""

from .adam import AdamState, adam_step
from .config import DeformConfig, DensifyConfig, LearningRates, SmokeInit, TrainConfig
from .density import GradStats, densify_and_prune
from .evaluate import evaluate_clear
from .stages import (LOG_COLUMNS, Stage3Result, TrainingLog, init_smoke, init_surface,
                     run_stage2, run_stage3, scene_extent_from_frames, train)

__all__ = ["AdamState", "adam_step", "DeformConfig", "DensifyConfig", "LearningRates",
           "SmokeInit", "TrainConfig", "GradStats", "densify_and_prune", "LOG_COLUMNS",
           "Stage3Result", "TrainingLog", "init_smoke", "init_surface", "run_stage2",
           "run_stage3", "scene_extent_from_frames", "train", "evaluate_clear"]
