"""
Training Configuration - Network architecture and optimization settings.

Both configs are plain dataclasses validated on construction and
round-trippable through JSON so they can be embedded in checkpoints.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Literal

from . import presets

Stage = Literal["local", "end2end", "finetune"]
NeighborMode = Literal["temporal", "spatial"]

STAGES = ("local", "end2end", "finetune")
NEIGHBOR_MODES = ("temporal", "spatial")


def _from_mapping(cls, data: dict[str, Any]):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"Unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    return cls(**kwargs)


@dataclass(frozen=True)
class ArchitectureConfig:
    """
    Widths and depths of every network in the pipeline.

    The 2D encoder, direction encoder G, reconstruction network J, fusion
    networks M_z/M_r/M_t and decoder R are all sized from these fields.
    """

    encoder_channels: tuple[int, ...] = presets.ENCODER_CHANNELS
    encoder_strides: tuple[int, ...] = presets.ENCODER_STRIDES
    direction_channels: int = presets.DIRECTION_CHANNELS
    direction_layers: int = presets.DIRECTION_LAYERS
    volume_channels: int = presets.VOLUME_CHANNELS
    reconstruction_layers: int = presets.RECONSTRUCTION_LAYERS
    fusion_layers: int = presets.FUSION_LAYERS
    sparse_hidden_channels: int = presets.SPARSE_HIDDEN_CHANNELS
    positional_frequencies: int = presets.POSITIONAL_FREQUENCIES
    decoder_width: int = presets.DECODER_WIDTH
    decoder_trunk_layers: int = presets.DECODER_TRUNK_LAYERS
    color_width: int = presets.COLOR_WIDTH

    def __post_init__(self):
        if len(self.encoder_channels) != len(self.encoder_strides):
            raise ValueError("encoder_channels and encoder_strides must have the same length")
        if not self.encoder_channels:
            raise ValueError("encoder needs at least one layer")
        for stride in self.encoder_strides:
            if stride < 1:
                raise ValueError(f"encoder strides must be >= 1, got {stride}")
        if self.downsample_factor & (self.downsample_factor - 1):
            raise ValueError("encoder downsample factor must be a power of two")
        for name in (
            "direction_channels",
            "direction_layers",
            "volume_channels",
            "reconstruction_layers",
            "fusion_layers",
            "sparse_hidden_channels",
            "positional_frequencies",
            "decoder_width",
            "decoder_trunk_layers",
            "color_width",
        ):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def feature_channels(self) -> int:
        return self.encoder_channels[-1]

    @property
    def downsample_factor(self) -> int:
        return math.prod(self.encoder_strides)

    @property
    def per_view_channels(self) -> int:
        return self.feature_channels + self.direction_channels

    @property
    def aggregated_channels(self) -> int:
        return 2 * self.per_view_channels

    @property
    def encoded_feature_channels(self) -> int:
        return self.volume_channels * (2 * self.positional_frequencies + 1)

    def to_dict(self) -> dict[str, Any]:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ArchitectureConfig":
        return _from_mapping(cls, data)


@dataclass(frozen=True)
class TrainConfig:
    """
    Settings for one training stage.

    Usage:
        config = TrainConfig(stage="local", iterations=5000)
        config = TrainConfig.from_json("configs/local.json")
    """

    stage: Stage = "local"
    lr: float = presets.LEARNING_RATE
    rays_per_batch: int = presets.RAYS_PER_BATCH
    iterations: int = 1000
    seed: int = 0

    # Local reconstruction
    neighbors: int = presets.NEIGHBOR_COUNT
    neighbor_mode: NeighborMode = "temporal"
    neighbor_angle_weight: float = presets.NEIGHBOR_ANGLE_WEIGHT
    include_self: bool = True
    key_frame_stride: int | None = None  # None -> use the dataset's stride
    voxel_size: float = presets.VOXEL_SIZE
    max_depth: float = presets.MAX_DEPTH

    # Rendering
    samples_per_voxel: int = presets.SAMPLES_PER_VOXEL
    render_chunk: int = presets.RENDER_CHUNK

    # Fusion and pruning
    fusion_window: int = presets.FUSION_WINDOW
    prune_gamma: float = presets.PRUNE_GAMMA
    prune_samples_per_axis: int = presets.PRUNE_SAMPLES_PER_AXIS
    prune_stride: int = 1  # frames between prunes during fusion
    prune_warmup_iterations: int = presets.PRUNE_WARMUP_ITERATIONS

    # Fine-tuning
    subdivide_stride: int = presets.SUBDIVIDE_STRIDE
    eval_every: int = 500

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.neighbor_mode not in NEIGHBOR_MODES:
            raise ValueError(f"neighbor_mode must be one of {NEIGHBOR_MODES}, got {self.neighbor_mode!r}")
        if not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.rays_per_batch < 1:
            raise ValueError(f"rays_per_batch must be >= 1, got {self.rays_per_batch}")
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if not 0 < self.prune_gamma < 1:
            raise ValueError(f"prune_gamma must be in (0, 1), got {self.prune_gamma}")
        if self.prune_samples_per_axis < 1:
            raise ValueError("prune_samples_per_axis must be >= 1")
        if self.neighbors < 1:
            raise ValueError("neighbors must be >= 1")
        if self.voxel_size <= 0 or self.max_depth <= 0:
            raise ValueError("voxel_size and max_depth must be positive")
        if self.samples_per_voxel < 1 or self.render_chunk < 1:
            raise ValueError("samples_per_voxel and render_chunk must be >= 1")
        if self.fusion_window < 1 or self.prune_stride < 1:
            raise ValueError("fusion_window and prune_stride must be >= 1")
        if self.subdivide_stride < 1 or self.eval_every < 1:
            raise ValueError("subdivide_stride and eval_every must be >= 1")
        if self.key_frame_stride is not None and self.key_frame_stride < 1:
            raise ValueError("key_frame_stride must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TrainConfig":
        return _from_mapping(cls, data)

    @classmethod
    def from_json(cls, path: str | Path) -> "TrainConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def replace(self, **changes: Any) -> "TrainConfig":
        data = self.to_dict()
        data.update(changes)
        return TrainConfig(**data)
