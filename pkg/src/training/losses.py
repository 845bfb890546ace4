"""
Losses - Photometric supervision for local and fused volumes.
"""

from __future__ import annotations

from typing import Sequence

import torch

from neural import Tape, record


def loss_local(rendered: torch.Tensor, target: torch.Tensor, tape: Tape | None = None) -> torch.Tensor:
    """Mean squared error over rays and channels."""
    target = torch.as_tensor(target, dtype=rendered.dtype)
    if rendered.shape != target.shape:
        raise ValueError(f"rendered {tuple(rendered.shape)} and target {tuple(target.shape)} batches differ")
    if rendered.numel() == 0:
        raise ValueError("cannot compute a loss over an empty batch")
    loss = torch.mean((rendered - target) ** 2)
    return record(tape, "loss_local", loss, rendered)


def loss_fuse(
    frames: Sequence[tuple[torch.Tensor, torch.Tensor, torch.Tensor]],
    tape: Tape | None = None,
) -> torch.Tensor:
    """
    Sum over frames of local MSE + global MSE.

    Args:
        frames: (local render, global render, ground truth) per frame, each (N_t, 3)
    """
    if not frames:
        raise ValueError("loss_fuse needs at least one frame")
    total = None
    for i, (local, fused, target) in enumerate(frames):
        if local.shape != fused.shape:
            raise ValueError(f"frame {i}: local {tuple(local.shape)} and global {tuple(fused.shape)} renders differ")
        term = loss_local(local, target) + loss_local(fused, target)
        total = term if total is None else total + term
    return record(tape, "loss_fuse", total, *[f[0] for f in frames], *[f[1] for f in frames])
