"""Optimization, checkpoints and the training loop."""

from allweather.training.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from allweather.training.optim import Adam, OptimState, clip_grad_norm, global_grad_norm, lr_at
from allweather.training.trainer import EpochRecord, Trainer, evaluate, write_training_log

__all__ = [
    "Adam",
    "Checkpoint",
    "EpochRecord",
    "OptimState",
    "Trainer",
    "clip_grad_norm",
    "evaluate",
    "global_grad_norm",
    "load_checkpoint",
    "lr_at",
    "save_checkpoint",
    "write_training_log",
]
