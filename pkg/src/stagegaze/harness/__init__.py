"""Operational surface: configuration, checkpoints, training/eval loops, personalisation and the CLI."""

from .checkpoint import Checkpoint, CheckpointError, capture, load_checkpoint, restore_model, save_checkpoint
from .config import DataConfig, ExperimentConfig, TrainConfig, load_config
from .train import EvalReport, TrainingDiverged, TrainResult, batch_plan, evaluate, load_sequences, train

__all__ = [
    "Checkpoint", "CheckpointError", "capture", "load_checkpoint", "restore_model", "save_checkpoint",
    "DataConfig", "ExperimentConfig", "TrainConfig", "load_config",
    "EvalReport", "TrainingDiverged", "TrainResult", "batch_plan", "evaluate", "load_sequences", "train",
]
