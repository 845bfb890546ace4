"""
Recurrent Fusion - Fold local volumes into the global volume with a
sparse GRU, touching only the voxels each local volume covers.

For the voxels of a local volume V_t (global state h zero-filled where absent):

    z = sigmoid(M_z([h || V_t]))
    r = sigmoid(M_r([h || V_t]))
    n = tanh(M_t([r * h || V_t]))
    h' = (1 - z) * h + z * n

Every other global voxel is carried over unchanged.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from config import ArchitectureConfig, TrainConfig
from geometry.camera import CameraView
from grid.sparse_grid import GridSpec, GridSpecMismatchError, SparseVoxelGrid, prune
from hooks import FrameFusedEvent, HookRegistry
from models import CANDIDATE, RESET_GATE, UPDATE_GATE, fusion_spec
from neural import NeighborTable, ParameterStore, Tape, record, sparse_conv_forward
from rendering.renderer import make_density_probe

from .local import FeatureMap, LocalVolume, reconstruct_frame

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FusionState:
    grid: SparseVoxelGrid
    frames_fused: int = 0

    @property
    def spec(self) -> GridSpec:
        return self.grid.spec

    @classmethod
    def empty(cls, spec: GridSpec, dtype: torch.dtype | None = None) -> "FusionState":
        return cls(SparseVoxelGrid.empty(spec, dtype=dtype), 0)

    def detach(self) -> "FusionState":
        return FusionState(self.grid.detach(), self.frames_fused)


@dataclass(frozen=True)
class GateOutputs:
    hidden: torch.Tensor
    update: torch.Tensor
    reset: torch.Tensor
    candidate: torch.Tensor


@dataclass
class FusionResult:
    state: FusionState
    locals: list[LocalVolume] = field(default_factory=list)
    snapshots: list[SparseVoxelGrid] = field(default_factory=list)
    pruned: list[int] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)


PruneHook = Callable[[SparseVoxelGrid], SparseVoxelGrid]


def gru_update(
    previous: torch.Tensor,
    local: SparseVoxelGrid,
    params: ParameterStore,
    arch: ArchitectureConfig,
    tape: Tape | None = None,
    table: NeighborTable | None = None,
) -> GateOutputs:
    """
    Gate math on the local active set.

    Args:
        previous: (N, C) global features aligned with local.coords (zeros for new voxels)
        local: Local volume V_t
    """
    spec = fusion_spec(arch)
    table = table or NeighborTable(local)
    joint = local.with_features(torch.cat([previous, local.features], dim=-1))
    update = torch.sigmoid(sparse_conv_forward(params, UPDATE_GATE, spec, joint, tape, table).features)
    reset = torch.sigmoid(sparse_conv_forward(params, RESET_GATE, spec, joint, tape, table).features)
    gated = local.with_features(torch.cat([reset * previous, local.features], dim=-1))
    candidate = torch.tanh(sparse_conv_forward(params, CANDIDATE, spec, gated, tape, table).features)
    hidden = (1 - update) * previous + update * candidate
    record(tape, "gru_update", hidden, previous, local.features)
    return GateOutputs(hidden=hidden, update=update, reset=reset, candidate=candidate)


def fuse_step(
    state: FusionState,
    local: SparseVoxelGrid,
    params: ParameterStore,
    arch: ArchitectureConfig,
    tape: Tape | None = None,
) -> FusionState:
    """
    One recurrent update of the global volume.

    Raises:
        GridSpecMismatchError: local and global lattices or widths differ
    """
    if not state.grid.spec.same_lattice(local.spec) or state.grid.spec.channels != local.spec.channels:
        raise GridSpecMismatchError(f"cannot fuse {local.spec} into {state.grid.spec}")
    if len(local) == 0:
        return FusionState(state.grid, state.frames_fused + 1)

    previous, _ = state.grid.gather(local.coords)
    gates = gru_update(previous, local, params, arch, tape)

    untouched = ~local.contains(state.grid.coords)
    coords = torch.cat([state.grid.coords[untouched], local.coords])
    features = torch.cat([state.grid.features[untouched], gates.hidden])
    grid = SparseVoxelGrid(state.grid.spec, coords, features, check_finite=False)
    return FusionState(grid, state.frames_fused + 1)


def density_pruner(params: ParameterStore, arch: ArchitectureConfig, gamma: float, samples_per_axis: int) -> PruneHook:
    """Prune with the current decoder as the density probe."""

    def run(grid: SparseVoxelGrid) -> SparseVoxelGrid:
        return prune(grid, make_density_probe(grid, params, arch), gamma, samples_per_axis).grid

    return run


def fuse_local_sequence(
    local_grids: Sequence[SparseVoxelGrid],
    params: ParameterStore,
    arch: ArchitectureConfig,
    pruner: PruneHook | None = None,
    prune_stride: int = 1,
    state: FusionState | None = None,
    tape: Tape | None = None,
    keep_snapshots: bool = False,
) -> FusionResult:
    """
    Chain fuse_step (and pruning every `prune_stride` frames) over prepared local volumes.
    """
    if not local_grids and state is None:
        raise ValueError("fuse_local_sequence needs at least one frame")
    state = state or FusionState.empty(local_grids[0].spec, dtype=local_grids[0].features.dtype)
    result = FusionResult(state=state)
    for grid in local_grids:
        start = time.perf_counter()
        state = fuse_step(state, grid, params, arch, tape)
        removed = 0
        if pruner is not None and state.frames_fused % prune_stride == 0:
            before = len(state.grid)
            state = FusionState(pruner(state.grid), state.frames_fused)
            removed = before - len(state.grid)
        result.seconds.append(time.perf_counter() - start)
        result.pruned.append(removed)
        if keep_snapshots:
            result.snapshots.append(state.grid)
    result.state = state
    return result


def fuse_sequence(
    views: Sequence[CameraView],
    frames: Sequence[int],
    params: ParameterStore,
    arch: ArchitectureConfig,
    config: TrainConfig,
    spec: GridSpec,
    bounds: tuple[np.ndarray, np.ndarray] | None = None,
    prune_enabled: bool = True,
    state: FusionState | None = None,
    tape: Tape | None = None,
    keep_snapshots: bool = False,
    hooks: HookRegistry | None = None,
    key_frames: Sequence[int] | None = None,
) -> FusionResult:
    """
    Reconstruct and fuse `frames` (positions in `views`) in order.

    Local volumes draw their neighbors from `key_frames` (default: every
    position in `views`).

    Each frame: local reconstruction -> fuse_step -> prune (every
    config.prune_stride frames when enabled). Emits a FrameFusedEvent
    per frame with its wall-clock time.
    """
    if not frames:
        raise ValueError("fuse_sequence needs at least one frame")
    volume_spec = spec.with_channels(arch.volume_channels)
    state = state or FusionState.empty(volume_spec, dtype=params.dtype)
    pruner = (
        density_pruner(params, arch, config.prune_gamma, config.prune_samples_per_axis) if prune_enabled else None
    )
    cache: dict[int, FeatureMap] = {}
    result = FusionResult(state=state)
    for position in frames:
        start = time.perf_counter()
        local = reconstruct_frame(views, position, params, arch, config, volume_spec, bounds, tape, cache, key_frames)
        step = fuse_local_sequence(
            [local.grid], params, arch, pruner, config.prune_stride, state, tape, keep_snapshots
        )
        state = step.state
        seconds = time.perf_counter() - start

        result.locals.append(local)
        result.snapshots.extend(step.snapshots)
        result.pruned.extend(step.pruned)
        result.seconds.append(seconds)
        if hooks is not None:
            hooks.invoke_callbacks(
                FrameFusedEvent(
                    frame=views[position].frame_index,
                    local_voxels=len(local.grid),
                    global_voxels=len(state.grid),
                    pruned=step.pruned[0],
                    seconds=seconds,
                )
            )
    result.state = state
    return result

