"""
Sparse Voxel Grid - Canonical-space voxel container with per-voxel features.

Features live at voxel centers. Coordinates are kept sorted
lexicographically and looked up through packed 63-bit keys, so every
consumer (sparse convolution, fusion, checkpoints) sees one canonical order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch

logger = logging.getLogger(__name__)

KEY_BITS = 21
KEY_OFFSET = 1 << (KEY_BITS - 1)
COORD_LIMIT = KEY_OFFSET

# Corner offsets of the 8-point interpolation stencil, lexicographic order
CORNER_OFFSETS = torch.tensor(
    [[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], dtype=torch.int64
)

DensityProbe = Callable[[torch.Tensor], torch.Tensor]


class GridSpecMismatchError(ValueError):
    """Two grids do not share origin and voxel size."""


@dataclass(frozen=True)
class GridSpec:
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    voxel_size: float = 0.1
    channels: int = 16

    def __post_init__(self):
        origin = tuple(float(v) for v in self.origin)
        if len(origin) != 3:
            raise ValueError(f"origin must have 3 components, got {len(origin)}")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "voxel_size", float(self.voxel_size))
        if not self.voxel_size > 0:
            raise ValueError(f"voxel_size must be positive, got {self.voxel_size}")
        if self.channels < 1:
            raise ValueError(f"channels must be >= 1, got {self.channels}")

    def with_channels(self, channels: int) -> "GridSpec":
        return GridSpec(self.origin, self.voxel_size, channels)

    def halved(self) -> "GridSpec":
        return GridSpec(self.origin, self.voxel_size / 2, self.channels)

    def same_lattice(self, other: "GridSpec") -> bool:
        return self.origin == other.origin and self.voxel_size == other.voxel_size

    def to_dict(self) -> dict:
        return {"origin": list(self.origin), "voxel_size": self.voxel_size, "channels": self.channels}


# =============================================================================
# COORDINATE HELPERS
# =============================================================================


def pack_keys(coords: torch.Tensor) -> torch.Tensor:
    """Pack (N, 3) int64 coordinates into order-preserving int64 keys."""
    shifted = coords.to(torch.int64) + KEY_OFFSET
    return (shifted[..., 0] << (2 * KEY_BITS)) | (shifted[..., 1] << KEY_BITS) | shifted[..., 2]


def unpack_keys(keys: torch.Tensor) -> torch.Tensor:
    mask = (1 << KEY_BITS) - 1
    coords = torch.stack([(keys >> (2 * KEY_BITS)) & mask, (keys >> KEY_BITS) & mask, keys & mask], dim=-1)
    return coords - KEY_OFFSET


def world_to_voxel(spec: GridSpec, x: np.ndarray | Sequence[float]) -> np.ndarray:
    """floor((x - origin) / voxel_size) as int64; works on (3,) or (N, 3)."""
    p = (np.asarray(x, dtype=np.float64) - np.asarray(spec.origin)) / spec.voxel_size
    return np.floor(p).astype(np.int64)


def voxel_center(spec: GridSpec, coord: np.ndarray | Sequence[int]) -> np.ndarray:
    """origin + (coord + 0.5) * voxel_size; works on (3,) or (N, 3)."""
    return np.asarray(spec.origin) + (np.asarray(coord, dtype=np.float64) + 0.5) * spec.voxel_size


def _as_coords(coords: torch.Tensor | np.ndarray | Sequence) -> torch.Tensor:
    tensor = torch.as_tensor(np.asarray(coords, dtype=np.int64) if not torch.is_tensor(coords) else coords)
    return tensor.to(torch.int64).reshape(-1, 3)


# =============================================================================
# GRID
# =============================================================================


class SparseVoxelGrid:
    """
    Sparse set of voxels with one C-channel feature vector each.

    Instances are treated as immutable: every operation returns a new grid.
    Features may carry autograd history so grids can flow through taped
    computations.

    Usage:
        grid = SparseVoxelGrid(spec, coords, features)
        idx = grid.lookup(torch.tensor([[0, 0, 0]]))  # -1 where absent
        sampled, empty = trilinear_sample(grid, points)
    """

    def __init__(
        self,
        spec: GridSpec,
        coords: torch.Tensor | np.ndarray,
        features: torch.Tensor,
        assume_sorted: bool = False,
        check_finite: bool = True,
    ):
        coords = _as_coords(coords)
        if features.dim() != 2 or features.shape[0] != coords.shape[0]:
            raise ValueError(f"features must be ({coords.shape[0]}, C), got {tuple(features.shape)}")
        if features.shape[1] != spec.channels:
            raise ValueError(f"features have {features.shape[1]} channels, spec expects {spec.channels}")
        if coords.numel() and int(coords.abs().max()) >= COORD_LIMIT:
            raise ValueError(f"voxel coordinates must satisfy |c| < {COORD_LIMIT}")
        if check_finite and not bool(torch.isfinite(features).all()):
            raise ValueError("grid features must be finite")

        keys = pack_keys(coords)
        if not assume_sorted and keys.numel() > 1:
            order = torch.argsort(keys)
            keys, coords, features = keys[order], coords[order], features[order]
        if keys.numel() > 1 and not bool((keys[1:] > keys[:-1]).all()):
            raise ValueError("voxel coordinates must be unique")

        self.spec = spec
        self.coords = coords
        self.features = features
        self._keys = keys

    # -- construction -------------------------------------------------------

    @classmethod
    def empty(cls, spec: GridSpec, dtype: torch.dtype | None = None) -> "SparseVoxelGrid":
        return cls(
            spec,
            torch.zeros((0, 3), dtype=torch.int64),
            torch.zeros((0, spec.channels), dtype=dtype or torch.get_default_dtype()),
            assume_sorted=True,
        )

    @classmethod
    def from_dense(cls, spec: GridSpec, dense: torch.Tensor, offset: Sequence[int] = (0, 0, 0)) -> "SparseVoxelGrid":
        """Activate every cell of a dense (X, Y, Z, C) block placed at `offset`."""
        x, y, z, _ = dense.shape
        coords = torch.stack(
            torch.meshgrid(torch.arange(x), torch.arange(y), torch.arange(z), indexing="ij"), dim=-1
        ).reshape(-1, 3)
        return cls(spec, coords + torch.as_tensor(offset), dense.reshape(-1, dense.shape[-1]), assume_sorted=True)

    def with_features(self, features: torch.Tensor) -> "SparseVoxelGrid":
        """Same active set, new features (row order must match self.coords)."""
        return SparseVoxelGrid(
            self.spec.with_channels(features.shape[1]), self.coords, features, assume_sorted=True, check_finite=False
        )

    def detach(self) -> "SparseVoxelGrid":
        return SparseVoxelGrid(self.spec, self.coords, self.features.detach(), assume_sorted=True, check_finite=False)

    def select(self, mask: torch.Tensor) -> "SparseVoxelGrid":
        """Keep the voxels where `mask` is True (order preserved)."""
        return SparseVoxelGrid(
            self.spec, self.coords[mask], self.features[mask], assume_sorted=True, check_finite=False
        )

    # -- queries ------------------------------------------------------------

    def __len__(self) -> int:
        return int(self.coords.shape[0])

    def __repr__(self) -> str:
        return f"SparseVoxelGrid(voxels={len(self)}, voxel_size={self.spec.voxel_size}, channels={self.spec.channels})"

    @property
    def keys(self) -> torch.Tensor:
        return self._keys

    def lookup(self, coords: torch.Tensor | np.ndarray) -> torch.Tensor:
        """Row index of each query coordinate, -1 where the voxel is absent."""
        query = _as_coords(coords)
        if len(self) == 0:
            return torch.full((query.shape[0],), -1, dtype=torch.int64)
        out_of_range = (query.abs() >= COORD_LIMIT).any(dim=-1)
        keys = pack_keys(query.clamp(-COORD_LIMIT + 1, COORD_LIMIT - 1))
        pos = torch.searchsorted(self._keys, keys).clamp(max=len(self) - 1)
        found = (self._keys[pos] == keys) & ~out_of_range
        return torch.where(found, pos, torch.full_like(pos, -1))

    def contains(self, coords: torch.Tensor | np.ndarray) -> torch.Tensor:
        return self.lookup(coords) >= 0

    def feature_at(self, coord: Sequence[int]) -> torch.Tensor | None:
        idx = int(self.lookup(torch.as_tensor([coord]))[0])
        return None if idx < 0 else self.features[idx]

    def gather(self, coords: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Features at coords with zero rows for absent voxels, plus the presence mask."""
        idx = self.lookup(coords)
        padded = torch.cat([self.features, self.features.new_zeros((1, self.features.shape[1]))])
        present = idx >= 0
        return padded[torch.where(present, idx, torch.full_like(idx, len(self)))], present

    def centers(self) -> torch.Tensor:
        origin = torch.tensor(self.spec.origin, dtype=torch.float64)
        return (origin + (self.coords.to(torch.float64) + 0.5) * self.spec.voxel_size).to(self.features.dtype)

    def coordinate_set(self) -> set[tuple[int, int, int]]:
        return {tuple(c) for c in self.coords.tolist()}

    def bounds(self) -> tuple[np.ndarray, np.ndarray] | None:
        """World-space AABB of the active voxels, or None for an empty grid."""
        if len(self) == 0:
            return None
        lo = self.coords.min(dim=0).values.numpy()
        hi = self.coords.max(dim=0).values.numpy() + 1
        origin = np.asarray(self.spec.origin)
        return origin + lo * self.spec.voxel_size, origin + hi * self.spec.voxel_size

    # -- persistence --------------------------------------------------------

    def state_dict(self) -> dict[str, torch.Tensor]:
        return {
            "coords": self.coords.clone(),
            "features": self.features.detach().clone(),
            "origin": torch.tensor(self.spec.origin, dtype=torch.float64),
            "voxel_size": torch.tensor([self.spec.voxel_size], dtype=torch.float64),
        }

    @classmethod
    def from_state(cls, state: dict[str, torch.Tensor]) -> "SparseVoxelGrid":
        features = state["features"]
        spec = GridSpec(
            origin=tuple(state["origin"].tolist()),
            voxel_size=float(state["voxel_size"].reshape(-1)[0]),
            channels=int(features.shape[1]),
        )
        return cls(spec, state["coords"], features)


# =============================================================================
# SAMPLING
# =============================================================================


def trilinear_weights(spec: GridSpec, points: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """
    8-corner stencil on the voxel-center lattice.

    Args:
        spec: Grid geometry
        points: (M, 3) world points

    Returns:
        corners (M, 8, 3) int64 voxel coordinates, weights (M, 8) summing to 1
    """
    origin = torch.tensor(spec.origin, dtype=points.dtype)
    p = (points - origin) / spec.voxel_size - 0.5
    base = torch.floor(p)
    frac = p - base
    corners = base.to(torch.int64)[:, None, :] + CORNER_OFFSETS[None]
    offsets = CORNER_OFFSETS.to(points.dtype)[None]
    weights = torch.where(offsets.bool(), frac[:, None, :], 1.0 - frac[:, None, :]).prod(dim=-1)
    return corners, weights


def trilinear_sample(grid: SparseVoxelGrid, points: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """
    Interpolate grid features at world points.

    Absent corners contribute a zero feature with their usual weight; the
    weights are not renormalized.

    Returns:
        features (M, C), empty flags (M,) set where all 8 corners are absent
    """
    points = torch.as_tensor(points, dtype=grid.features.dtype).reshape(-1, 3)
    corners, weights = trilinear_weights(grid.spec, points)
    values, present = grid.gather(corners.reshape(-1, 3))
    values = values.reshape(points.shape[0], 8, -1)
    present = present.reshape(points.shape[0], 8)
    sampled = (weights[..., None] * values).sum(dim=1)
    return sampled, ~present.any(dim=1)


# =============================================================================
# TOPOLOGY
# =============================================================================


@dataclass(frozen=True)
class PruneResult:
    grid: SparseVoxelGrid
    removed: torch.Tensor  # (R, 3) coordinates

    @property
    def removed_count(self) -> int:
        return int(self.removed.shape[0])


def stratified_offsets(samples_per_axis: int, dtype: torch.dtype = torch.float64) -> torch.Tensor:
    """m^3 interior lattice points in voxel units relative to the center, range (-0.5, 0.5)."""
    ticks = (torch.arange(samples_per_axis, dtype=dtype) + 0.5) / samples_per_axis - 0.5
    return torch.stack(torch.meshgrid(ticks, ticks, ticks, indexing="ij"), dim=-1).reshape(-1, 3)


def prune(
    grid: SparseVoxelGrid,
    density_probe: DensityProbe,
    gamma: float = 0.6,
    samples_per_axis: int = 2,
) -> PruneResult:
    """
    Drop voxels whose every probe point is nearly transparent.

    A voxel is removed iff min_i exp(-sigma(v_i)) > gamma over its
    samples_per_axis^3 stratified interior points. Surviving rows keep their
    features untouched.
    """
    if not 0 < gamma < 1:
        raise ValueError(f"gamma must be in (0, 1), got {gamma}")
    if samples_per_axis < 1:
        raise ValueError(f"samples_per_axis must be >= 1, got {samples_per_axis}")
    if len(grid) == 0:
        return PruneResult(grid, torch.zeros((0, 3), dtype=torch.int64))

    with torch.no_grad():
        offsets = stratified_offsets(samples_per_axis, grid.features.dtype) * grid.spec.voxel_size
        points = (grid.centers()[:, None, :] + offsets[None]).reshape(-1, 3)
        sigma = density_probe(points).reshape(len(grid), -1)
        transmittance = torch.exp(-sigma).min(dim=1).values
        keep = transmittance <= gamma
    logger.debug("prune: %d of %d voxels kept", int(keep.sum()), len(grid))
    return PruneResult(grid.select(keep), grid.coords[~keep])


def subdivide(grid: SparseVoxelGrid) -> SparseVoxelGrid:
    """Split every voxel into 8 children carrying a copy of the parent feature."""
    children = (2 * grid.coords[:, None, :] + CORNER_OFFSETS[None]).reshape(-1, 3)
    features = grid.features.repeat_interleave(8, dim=0)
    return SparseVoxelGrid(grid.spec.halved(), children, features, check_finite=False)


def overlap_split(
    global_grid: SparseVoxelGrid, local: SparseVoxelGrid
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """
    Partition the union of two active sets.

    Returns:
        (overlap, local_only, global_only) coordinate tensors, each sorted
    """
    if not global_grid.spec.same_lattice(local.spec):
        raise GridSpecMismatchError(f"grid specs differ: {global_grid.spec} vs {local.spec}")
    in_global = global_grid.contains(local.coords)
    in_local = local.contains(global_grid.coords)
    return local.coords[in_global], local.coords[~in_global], global_grid.coords[~in_local]
