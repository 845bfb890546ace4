"""
Reconstruction - Local volumes from posed views and their recurrent fusion.
"""

from .fusion import (
    FusionResult,
    FusionState,
    GateOutputs,
    density_pruner,
    fuse_local_sequence,
    fuse_sequence,
    fuse_step,
    gru_update,
)
from .local import (
    FeatureMap,
    LocalVolume,
    PerViewFeatureVolume,
    aggregate_mean_var,
    build_per_view_volume,
    encode_direction,
    extract_features,
    reconstruct_frame,
    reconstruct_local_volume,
    sample_feature_map,
)

__all__ = [
    "FeatureMap",
    "FusionResult",
    "FusionState",
    "GateOutputs",
    "LocalVolume",
    "PerViewFeatureVolume",
    "aggregate_mean_var",
    "build_per_view_volume",
    "density_pruner",
    "encode_direction",
    "extract_features",
    "fuse_local_sequence",
    "fuse_sequence",
    "fuse_step",
    "gru_update",
    "reconstruct_frame",
    "reconstruct_local_volume",
    "sample_feature_map",
]
