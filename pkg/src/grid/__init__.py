"""
Grid - Sparse voxel feature volumes.
"""

from .sparse_grid import (
    GridSpec,
    GridSpecMismatchError,
    PruneResult,
    SparseVoxelGrid,
    overlap_split,
    prune,
    subdivide,
    trilinear_sample,
    trilinear_weights,
    voxel_center,
    world_to_voxel,
)

__all__ = [
    "GridSpec",
    "GridSpecMismatchError",
    "PruneResult",
    "SparseVoxelGrid",
    "overlap_split",
    "prune",
    "subdivide",
    "trilinear_sample",
    "trilinear_weights",
    "voxel_center",
    "world_to_voxel",
]
