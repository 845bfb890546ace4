"""
Neural Layers - Dense MLPs, 2D convolution, submanifold sparse 3D
convolution and positional encoding.

Every forward function takes the ParameterStore, the prefix its tensors
were registered under and the layer spec, and records itself on an
optional Tape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import torch
import torch.nn.functional as F

from grid.sparse_grid import SparseVoxelGrid

from .autodiff import Tape, record
from .params import ParameterStore

ACTIVATIONS: dict[str | None, Callable[[torch.Tensor], torch.Tensor]] = {
    None: lambda x: x,
    "identity": lambda x: x,
    "relu": torch.relu,
    "sigmoid": torch.sigmoid,
    "tanh": torch.tanh,
    "softplus": F.softplus,
}

# 27 kernel offsets in lexicographic order; index 13 is the center tap
KERNEL_OFFSETS = torch.tensor(
    [[i, j, k] for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)], dtype=torch.int64
)
CENTER_TAP = 13


class ShapeMismatchError(ValueError):
    """An input's channel count does not match the layer it is fed to."""


def _check_activation(name: str | None) -> None:
    if name not in ACTIVATIONS:
        raise ValueError(f"unknown activation {name!r}; expected one of {sorted(k for k in ACTIVATIONS if k)}")


# =============================================================================
# LAYER SPECS
# =============================================================================


@dataclass(frozen=True)
class MLPSpec:
    """
    Fully connected stack.

    sizes = (in, hidden..., out); `activation` follows every layer but the
    last, which uses `output_activation`.
    """

    sizes: tuple[int, ...]
    activation: str | None = "relu"
    output_activation: str | None = None

    def __post_init__(self):
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise ValueError(f"MLP sizes must list >= 2 positive widths, got {self.sizes}")
        _check_activation(self.activation)
        _check_activation(self.output_activation)

    @property
    def num_layers(self) -> int:
        return len(self.sizes) - 1

    def parameter_shapes(self) -> list[tuple[str, tuple[int, ...], int]]:
        shapes = []
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            shapes += [(f"{i}.weight", (fan_in, fan_out), fan_in), (f"{i}.bias", (fan_out,), 0)]
        return shapes


@dataclass(frozen=True)
class ConvSpec:
    """Strided 2D convolution stack; channels = (in, out_1, ..., out_n)."""

    channels: tuple[int, ...]
    strides: tuple[int, ...]
    kernel_size: int = 3
    activation: str | None = "relu"
    output_activation: str | None = None

    def __post_init__(self):
        if len(self.channels) != len(self.strides) + 1:
            raise ValueError("ConvSpec needs one stride per layer")
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")
        _check_activation(self.activation)
        _check_activation(self.output_activation)

    @property
    def num_layers(self) -> int:
        return len(self.strides)

    def parameter_shapes(self) -> list[tuple[str, tuple[int, ...], int]]:
        k = self.kernel_size
        shapes = []
        for i, (cin, cout) in enumerate(zip(self.channels[:-1], self.channels[1:])):
            shapes += [(f"{i}.weight", (cout, cin, k, k), cin * k * k), (f"{i}.bias", (cout,), 0)]
        return shapes


@dataclass(frozen=True)
class SparseConvSpec:
    """Submanifold 3x3x3 sparse convolution stack; channels = (in, out_1, ..., out_n)."""

    channels: tuple[int, ...]
    activation: str | None = "relu"
    output_activation: str | None = None

    def __post_init__(self):
        if len(self.channels) < 2 or min(self.channels) < 1:
            raise ValueError(f"SparseConvSpec needs >= 2 positive widths, got {self.channels}")
        _check_activation(self.activation)
        _check_activation(self.output_activation)

    @property
    def num_layers(self) -> int:
        return len(self.channels) - 1

    def parameter_shapes(self) -> list[tuple[str, tuple[int, ...], int]]:
        taps = len(KERNEL_OFFSETS)
        shapes = []
        for i, (cin, cout) in enumerate(zip(self.channels[:-1], self.channels[1:])):
            shapes += [(f"{i}.weight", (taps, cin, cout), taps * cin), (f"{i}.bias", (cout,), 0)]
        return shapes


def _layer_activation(spec, index: int) -> Callable[[torch.Tensor], torch.Tensor]:
    last = index == spec.num_layers - 1
    return ACTIVATIONS[spec.output_activation if last else spec.activation]


# =============================================================================
# DENSE
# =============================================================================


def mlp_forward(
    params: ParameterStore,
    prefix: str,
    spec: MLPSpec,
    x: torch.Tensor,
    tape: Tape | None = None,
) -> torch.Tensor:
    """
    Apply an MLP to the last dimension of x.

    Raises:
        ShapeMismatchError: x.shape[-1] differs from the first layer width
    """
    if x.shape[-1] != spec.sizes[0]:
        raise ShapeMismatchError(f"{prefix}: expected input width {spec.sizes[0]}, got {x.shape[-1]}")
    h = x
    for i in range(spec.num_layers):
        weight, bias = params[f"{prefix}.{i}.weight"], params[f"{prefix}.{i}.bias"]
        h = _layer_activation(spec, i)(h @ weight + bias)
        record(tape, f"{prefix}.{i}:dense", h, weight, bias)
    return h


# =============================================================================
# CONVOLUTION 2D
# =============================================================================


def conv2d(
    x: torch.Tensor,
    weight: torch.Tensor,
    bias: torch.Tensor | None = None,
    stride: int = 1,
    tape: Tape | None = None,
) -> torch.Tensor:
    """
    Cross-correlation with zero padding k // 2, then stride.

    Args:
        x: (C_in, H, W) or (B, C_in, H, W)
        weight: (C_out, C_in, k, k)
        bias: (C_out,) or None
        stride: Output subsampling

    Returns:
        (C_out, ceil(H / stride), ceil(W / stride)) with the batch axis kept if given
    """
    batched = x.dim() == 4
    if x.dim() not in (3, 4):
        raise ShapeMismatchError(f"conv2d input must be 3D or 4D, got shape {tuple(x.shape)}")
    channels = x.shape[1] if batched else x.shape[0]
    if channels != weight.shape[1]:
        raise ShapeMismatchError(f"conv2d expects {weight.shape[1]} input channels, got {channels}")
    out = F.conv2d(x if batched else x[None], weight, bias, stride=stride, padding=weight.shape[-1] // 2)
    out = out if batched else out[0]
    return record(tape, "conv2d", out, x, weight)


def conv_forward(
    params: ParameterStore,
    prefix: str,
    spec: ConvSpec,
    x: torch.Tensor,
    tape: Tape | None = None,
) -> torch.Tensor:
    h = x
    for i, stride in enumerate(spec.strides):
        h = conv2d(h, params[f"{prefix}.{i}.weight"], params[f"{prefix}.{i}.bias"], stride, tape)
        h = _layer_activation(spec, i)(h)
    return h


# =============================================================================
# SPARSE CONVOLUTION 3D
# =============================================================================


class NeighborTable:
    """
    Row index of each of the 27 neighbors of every active voxel (-1 if absent).

    Built once per active set and shared by every layer of a stack.
    """

    def __init__(self, grid: SparseVoxelGrid):
        self.coords = grid.coords
        n = len(grid)
        if n == 0:
            self.indices = torch.zeros((0, len(KERNEL_OFFSETS)), dtype=torch.int64)
            return
        neighbors = (grid.coords[:, None, :] + KERNEL_OFFSETS[None]).reshape(-1, 3)
        self.indices = grid.lookup(neighbors).reshape(n, len(KERNEL_OFFSETS))

    def __len__(self) -> int:
        return int(self.indices.shape[0])

    def matches(self, grid: SparseVoxelGrid) -> bool:
        return self.coords is grid.coords or torch.equal(self.coords, grid.coords)


def sparse_conv3d(
    features: torch.Tensor,
    table: NeighborTable,
    weight: torch.Tensor,
    bias: torch.Tensor | None = None,
    tape: Tape | None = None,
) -> torch.Tensor:
    """
    Submanifold 3x3x3 convolution over a fixed active set.

    out[v] = bias + sum_o features[v + o] @ weight[o], with absent
    neighbors contributing zero; offsets are summed in KERNEL_OFFSETS order.

    Args:
        features: (N, C_in) rows in the table's voxel order
        table: Neighbor indices of the active set
        weight: (27, C_in, C_out)
        bias: (C_out,) or None

    Returns:
        (N, C_out) features on the same active set
    """
    if features.shape[0] != len(table):
        raise ShapeMismatchError(f"{features.shape[0]} feature rows for {len(table)} voxels")
    if weight.shape[0] != len(KERNEL_OFFSETS) or features.shape[1] != weight.shape[1]:
        raise ShapeMismatchError(
            f"sparse_conv3d expects weight (27, {features.shape[1]}, C_out), got {tuple(weight.shape)}"
        )
    n = features.shape[0]
    padded = torch.cat([features, features.new_zeros((1, features.shape[1]))])
    index = torch.where(table.indices >= 0, table.indices, torch.full_like(table.indices, n))
    out = features.new_zeros((n, weight.shape[2]))
    for tap in range(len(KERNEL_OFFSETS)):
        out = out + padded[index[:, tap]] @ weight[tap]
    if bias is not None:
        out = out + bias
    return record(tape, "sparse_conv3d", out, features, weight)


def sparse_conv_forward(
    params: ParameterStore,
    prefix: str,
    spec: SparseConvSpec,
    grid: SparseVoxelGrid,
    tape: Tape | None = None,
    table: NeighborTable | None = None,
) -> SparseVoxelGrid:
    """Run a sparse conv stack; the output grid keeps the input's active set."""
    if grid.spec.channels != spec.channels[0]:
        raise ShapeMismatchError(f"{prefix}: expected {spec.channels[0]} channels, got {grid.spec.channels}")
    table = table or NeighborTable(grid)
    h = grid.features
    for i in range(spec.num_layers):
        h = sparse_conv3d(h, table, params[f"{prefix}.{i}.weight"], params[f"{prefix}.{i}.bias"], tape)
        h = _layer_activation(spec, i)(h)
    return grid.with_features(h)


# =============================================================================
# POSITIONAL ENCODING
# =============================================================================


def positional_encoding(f: torch.Tensor, frequencies: int, tape: Tape | None = None) -> torch.Tensor:
    """
    [f, sin(2^0 pi f), cos(2^0 pi f), ..., sin(2^(L-1) pi f), cos(2^(L-1) pi f)]

    Blocks of width C are concatenated along the last axis, so a C-vector
    becomes C * (2L + 1) wide.
    """
    if frequencies < 1:
        raise ValueError(f"frequencies must be >= 1, got {frequencies}")
    parts = [f]
    for level in range(frequencies):
        scaled = (2.0**level) * math.pi * f
        parts += [torch.sin(scaled), torch.cos(scaled)]
    return record(tape, "positional_encoding", torch.cat(parts, dim=-1), f)
