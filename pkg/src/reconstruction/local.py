"""
Local Reconstruction - Per-frame sparse feature volume from K posed views.

    image --encoder--> feature map --project + bilinear--> per-view volume
    per-view volumes --mean || variance--> aggregated grid --J--> local volume
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from config import ArchitectureConfig, TrainConfig
from geometry.camera import CameraView, frustum_voxels, project_points, select_neighbor_views
from grid.sparse_grid import GridSpec, SparseVoxelGrid, pack_keys, unpack_keys
from models import DIRECTION, ENCODER, RECONSTRUCTION, direction_spec, encoder_spec, reconstruction_spec
from neural import ParameterStore, Tape, conv_forward, mlp_forward, record, sparse_conv_forward

logger = logging.getLogger(__name__)

UNIT_TOLERANCE = 1e-6


@dataclass(frozen=True)
class FeatureMap:
    """Encoder output (C, H', W') covering the whole source image."""

    features: torch.Tensor
    factor: int

    @property
    def channels(self) -> int:
        return int(self.features.shape[0])

    @property
    def size(self) -> tuple[int, int]:
        return int(self.features.shape[1]), int(self.features.shape[2])


@dataclass(frozen=True)
class PerViewFeatureVolume:
    """[image feature || direction encoding] at every voxel one view sees."""

    coords: torch.Tensor  # (M, 3) sorted
    features: torch.Tensor  # (M, C_img + C_dir)
    frame_index: int


@dataclass(frozen=True)
class LocalVolume:
    grid: SparseVoxelGrid
    frame: int  # position of the reference frame in its sequence
    neighbors: tuple[int, ...]


# =============================================================================
# 2D FEATURES
# =============================================================================


def extract_features(
    view: CameraView,
    params: ParameterStore,
    arch: ArchitectureConfig,
    tape: Tape | None = None,
) -> FeatureMap:
    image = torch.as_tensor(view.image, dtype=params.dtype).permute(2, 0, 1)
    features = conv_forward(params, ENCODER, encoder_spec(arch), image, tape)
    return FeatureMap(features=features, factor=arch.downsample_factor)


def encode_direction(
    directions: torch.Tensor,
    params: ParameterStore,
    arch: ArchitectureConfig,
    tape: Tape | None = None,
) -> torch.Tensor:
    """G(d) for (N, 3) unit directions."""
    directions = torch.as_tensor(directions, dtype=params.dtype).reshape(-1, 3)
    norms = directions.norm(dim=-1)
    if directions.numel() and float((norms - 1).abs().max()) > UNIT_TOLERANCE:
        raise ValueError("encode_direction expects unit directions")
    return mlp_forward(params, DIRECTION, direction_spec(arch), directions, tape)


def sample_feature_map(feature_map: FeatureMap, pixels: torch.Tensor, image_size: tuple[int, int]) -> torch.Tensor:
    """
    Bilinear lookup at image-pixel positions (pixel centers at +0.5).

    The feature map spans the same extent as the image, so positions are
    normalized by the image size and sampled with align_corners=False;
    lookups beyond the outermost feature centers clamp to the border.

    Returns:
        (N, C) features
    """
    height, width = image_size
    grid = torch.stack([2.0 * pixels[:, 0] / width - 1.0, 2.0 * pixels[:, 1] / height - 1.0], dim=-1)
    grid = grid.to(feature_map.features.dtype)[None, None]  # (1, 1, N, 2)
    sampled = F.grid_sample(
        feature_map.features[None], grid, mode="bilinear", padding_mode="border", align_corners=False
    )
    return sampled[0, :, 0].T


# =============================================================================
# PER-VIEW VOLUMES
# =============================================================================


def build_per_view_volume(
    view: CameraView,
    feature_map: FeatureMap,
    active: torch.Tensor,
    spec: GridSpec,
    params: ParameterStore,
    arch: ArchitectureConfig,
    max_depth: float,
    tape: Tape | None = None,
) -> PerViewFeatureVolume:
    """
    Unproject one view's features onto the voxels it sees.

    Voxels whose centers fall behind the camera, outside the image or beyond
    max_depth are left out of this view's volume.
    """
    coords = torch.as_tensor(active, dtype=torch.int64).reshape(-1, 3)
    centers = np.asarray(spec.origin) + (coords.numpy() + 0.5) * spec.voxel_size
    pixels, depth, visible = project_points(centers, view)
    visible &= depth <= max_depth
    keep = torch.from_numpy(visible)

    dtype = params.dtype
    if not visible.any():
        width = feature_map.channels + arch.direction_channels
        return PerViewFeatureVolume(coords[keep], torch.zeros((0, width), dtype=dtype), view.frame_index)
    image_part = sample_feature_map(
        feature_map,
        torch.from_numpy(pixels[visible]),
        (view.intrinsics.height, view.intrinsics.width),
    )
    offsets = centers[visible] - view.pose.center
    directions = torch.from_numpy(offsets / np.linalg.norm(offsets, axis=1, keepdims=True)).to(dtype)
    direction_part = encode_direction(directions, params, arch, tape)
    features = torch.cat([image_part, direction_part], dim=-1)
    record(tape, "unproject", features, feature_map.features)
    return PerViewFeatureVolume(coords=coords[keep], features=features, frame_index=view.frame_index)


def aggregate_mean_var(volumes: Sequence[PerViewFeatureVolume], spec: GridSpec) -> SparseVoxelGrid:
    """
    Per-voxel [mean || population variance] over the views that see it.

    Views are reduced in frame_index order so any permutation of `volumes`
    gives identical output. Features are shifted by the first observing
    view's (detached) value before averaging, which makes the variance of
    identical observations exactly zero.
    """
    if not volumes:
        raise ValueError("aggregate_mean_var needs at least one view")
    volumes = sorted(volumes, key=lambda v: v.frame_index)
    channels = volumes[0].features.shape[1]
    union = torch.unique(torch.cat([pack_keys(v.coords) for v in volumes]))  # sorted
    n = union.shape[0]
    dtype = volumes[0].features.dtype

    rows = [torch.searchsorted(union, pack_keys(v.coords)) for v in volumes]
    count = torch.zeros(n, dtype=dtype)
    shift = torch.zeros((n, channels), dtype=dtype)
    seen = torch.zeros(n, dtype=torch.bool)
    for row, volume in zip(rows, volumes):
        count.index_add_(0, row, torch.ones(row.shape[0], dtype=dtype))
        first = ~seen[row]
        shift[row[first]] = volume.features.detach()[first]
        seen[row] = True

    total = torch.zeros((n, channels), dtype=dtype)
    for row, volume in zip(rows, volumes):
        total = total.index_add(0, row, volume.features - shift[row])
    mean = shift + total / count[:, None]

    squares = torch.zeros((n, channels), dtype=dtype)
    for row, volume in zip(rows, volumes):
        squares = squares.index_add(0, row, (volume.features - mean[row]) ** 2)
    variance = squares / count[:, None]

    return SparseVoxelGrid(
        spec.with_channels(2 * channels),
        unpack_keys(union),
        torch.cat([mean, variance], dim=-1),
        assume_sorted=True,
        check_finite=False,
    )


def reconstruct_local_volume(
    aggregated: SparseVoxelGrid,
    params: ParameterStore,
    arch: ArchitectureConfig,
    tape: Tape | None = None,
) -> SparseVoxelGrid:
    """J over the aggregated grid; the active set is preserved."""
    return sparse_conv_forward(params, RECONSTRUCTION, reconstruction_spec(arch), aggregated, tape)


# =============================================================================
# FRAME ORCHESTRATION
# =============================================================================


def reconstruct_frame(
    views: Sequence[CameraView],
    position: int,
    params: ParameterStore,
    arch: ArchitectureConfig,
    config: TrainConfig,
    spec: GridSpec,
    bounds: tuple[np.ndarray, np.ndarray] | None = None,
    tape: Tape | None = None,
    feature_cache: dict[int, FeatureMap] | None = None,
    key_frames: Sequence[int] | None = None,
) -> LocalVolume:
    """
    Build the local volume of views[position] from its K-view neighborhood.

    Neighbors are drawn from the key-frame subsequence only; non-key frames
    serve as supervision and never feed a local volume.

    Args:
        views: Frame sequence the neighborhood is drawn from
        position: Reference frame position in `views`
        config: Neighbor count/mode, include_self and max_depth
        spec: Volume lattice (channels = output width)
        bounds: Optional scene AABB limiting the active set
        feature_cache: Reuses feature maps across frames of one pass, keyed by position
        key_frames: Positions in `views` eligible as neighbors (default: all)

    Raises:
        ValueError: position is not one of key_frames
    """
    candidates = list(range(len(views))) if key_frames is None else list(key_frames)
    if position not in candidates:
        raise ValueError(f"frame position {position} is not a key frame {candidates}")
    order = select_neighbor_views(
        candidates.index(position),
        [views[c] for c in candidates],
        config.neighbors,
        mode=config.neighbor_mode,
        angle_weight=config.neighbor_angle_weight,
        include_self=config.include_self,
    )
    neighbors = [candidates[i] for i in order]
    chosen = [views[i] for i in neighbors]
    active = torch.from_numpy(frustum_voxels(chosen, spec, config.max_depth, bounds))
    if active.shape[0] == 0:
        logger.debug("frame %d: empty frustum set", position)
        empty = SparseVoxelGrid.empty(spec.with_channels(arch.volume_channels), dtype=params.dtype)
        return LocalVolume(grid=empty, frame=position, neighbors=tuple(neighbors))

    volumes = []
    for i in neighbors:
        if feature_cache is not None and i in feature_cache:
            feature_map = feature_cache[i]
        else:
            feature_map = extract_features(views[i], params, arch, tape)
            if feature_cache is not None:
                feature_cache[i] = feature_map
        volume = build_per_view_volume(views[i], feature_map, active, spec, params, arch, config.max_depth, tape)
        if volume.coords.shape[0]:
            volumes.append(volume)

    aggregated = aggregate_mean_var(volumes, spec)
    grid = reconstruct_local_volume(aggregated, params, arch, tape)
    logger.debug("frame %d: %d local voxels from views %s", position, len(grid), neighbors)
    return LocalVolume(grid=grid, frame=position, neighbors=tuple(neighbors))
