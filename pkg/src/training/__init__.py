"""
Training - Losses, the staged trainer and checkpoints.
"""

from .checkpoint import (
    Checkpoint,
    CheckpointCorruptError,
    CheckpointError,
    CheckpointVersionError,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from .losses import loss_fuse, loss_local
from .trainer import (
    RayBatch,
    Trainer,
    TrainingDivergedError,
    draw_rays,
    finetune,
    local_psnr,
    mean_psnr,
    reconstruct_scene,
    render_settings,
    train_stage_end2end,
    train_stage_local,
)

__all__ = [
    "Checkpoint",
    "CheckpointCorruptError",
    "CheckpointError",
    "CheckpointVersionError",
    "RayBatch",
    "Trainer",
    "TrainingDivergedError",
    "decode_checkpoint",
    "draw_rays",
    "encode_checkpoint",
    "finetune",
    "load_checkpoint",
    "local_psnr",
    "loss_fuse",
    "loss_local",
    "mean_psnr",
    "reconstruct_scene",
    "render_settings",
    "save_checkpoint",
    "train_stage_end2end",
    "train_stage_local",
]
