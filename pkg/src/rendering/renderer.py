"""
Volume Renderer - Decode density and radiance from a sparse grid and
composite them along camera rays.

PIPELINE:
    traverse_rays   lattice (3D-DDA) walk over the active voxels, per ray
    sample_hits     S stratified samples inside every intersected voxel
    decode_radiance sigma, color = R(PE(trilinear feature), d)
    composite       alpha = 1 - exp(-sigma * delta), T = exclusive product
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch

from config import ArchitectureConfig
from config.presets import DEPTH_EPSILON
from geometry.camera import CameraView, Ray, pixel_rays
from grid.sparse_grid import SparseVoxelGrid, trilinear_sample
from models import DECODER_COLOR, DECODER_SIGMA, DECODER_TRUNK, decoder_specs
from neural import ParameterStore, Tape, mlp_forward, positional_encoding, record

logger = logging.getLogger(__name__)

START_EPSILON = 1e-9  # fraction of a voxel nudged past the entry point
DENSITY_CHUNK = 65536


@dataclass(frozen=True)
class RaySample:
    position: np.ndarray
    t: float
    delta: float


@dataclass(frozen=True)
class RayHits:
    """Active voxels crossed by each ray, ordered by ray then entry distance."""

    ray: np.ndarray  # (H,) ray index
    voxel: np.ndarray  # (H,) grid row
    entry: np.ndarray  # (H,)
    exit: np.ndarray  # (H,)

    def __len__(self) -> int:
        return int(self.ray.shape[0])


@dataclass(frozen=True)
class RaySamples:
    """Flat samples for a batch of rays, ordered by ray then t."""

    ray: np.ndarray  # (P,)
    t: np.ndarray  # (P,)
    delta: np.ndarray  # (P,)
    positions: np.ndarray  # (P, 3)
    directions: np.ndarray  # (P, 3)

    def __len__(self) -> int:
        return int(self.ray.shape[0])


@dataclass(frozen=True)
class RadianceOutput:
    sigma: torch.Tensor  # (P,) >= 0
    color: torch.Tensor  # (P, 3) in [0, 1]
    empty: torch.Tensor  # (P,) all 8 interpolation corners absent


@dataclass(frozen=True)
class RenderSettings:
    near: float = 0.0
    far: float = 1e9
    samples_per_voxel: int = 4
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    chunk: int = 4096

    def __post_init__(self):
        if not 0 <= self.near < self.far:
            raise ValueError(f"need 0 <= near < far, got near={self.near}, far={self.far}")
        if self.samples_per_voxel < 1 or self.chunk < 1:
            raise ValueError("samples_per_voxel and chunk must be >= 1")


@dataclass(frozen=True)
class RenderOutput:
    color: torch.Tensor  # (R, 3)
    depth: torch.Tensor  # (R,)
    transmittance: torch.Tensor  # (R,) final transmittance
    opacity: torch.Tensor  # (R,) sum of weights

    @property
    def depth_valid(self) -> torch.Tensor:
        return self.opacity > DEPTH_EPSILON


# =============================================================================
# TRAVERSAL
# =============================================================================


def _clip_to_box(origins, directions, lo, hi, near, far):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / directions
        t_a = (lo - origins) * inv
        t_b = (hi - origins) * inv
    t_lo = np.where(np.isnan(t_a), -np.inf, np.minimum(t_a, t_b))
    t_hi = np.where(np.isnan(t_b), np.inf, np.maximum(t_a, t_b))
    # rays parallel to a slab: inside -> unbounded, outside -> empty
    parallel = directions == 0
    outside = parallel & ((origins < lo) | (origins > hi))
    t_lo = np.where(parallel, -np.inf, t_lo)
    t_hi = np.where(parallel, np.inf, t_hi)
    t0 = np.maximum(t_lo.max(axis=1), near)
    t1 = np.minimum(t_hi.min(axis=1), far)
    t1 = np.where(outside.any(axis=1), -np.inf, t1)
    return t0, t1


def traverse_rays(
    origins: np.ndarray,
    directions: np.ndarray,
    grid: SparseVoxelGrid,
    near: float,
    far: float,
) -> RayHits:
    """
    Walk every ray through the voxel lattice and keep the active cells.

    Rays are clipped to the AABB of the active set and to [near, far], then
    stepped one lattice cell at a time (all rays advance together).
    Zero-length crossings (exact edge or corner hits) are dropped.
    """
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    directions = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    empty = RayHits(*(np.zeros(0, dtype=dt) for dt in (np.int64, np.int64, np.float64, np.float64)))
    bounds = grid.bounds()
    if bounds is None or len(origins) == 0:
        return empty

    size = grid.spec.voxel_size
    origin = np.asarray(grid.spec.origin)
    t0, t1 = _clip_to_box(origins, directions, bounds[0], bounds[1], near, far)
    rays = np.nonzero(t1 > t0)[0]
    if len(rays) == 0:
        return empty

    o, d = origins[rays], directions[rays]
    t_enter, t_end = t0[rays], t1[rays]
    start = o + (t_enter + START_EPSILON * size)[:, None] * d
    voxel = np.floor((start - origin) / size).astype(np.int64)
    step = np.sign(d).astype(np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        boundary = origin + (voxel + (step > 0)) * size
        t_max = np.where(d != 0, (boundary - o) / d, np.inf)
        t_delta = np.where(d != 0, size / np.abs(d), np.inf)

    hit_ray, hit_voxel, hit_entry, hit_exit = [], [], [], []
    alive = np.arange(len(rays))
    while len(alive):
        rows = grid.lookup(torch.from_numpy(voxel[alive])).numpy()
        axis = np.argmin(t_max[alive], axis=1)
        t_next = np.minimum(t_max[alive, axis], t_end[alive])
        keep = (rows >= 0) & (t_next > t_enter[alive])
        hit_ray.append(rays[alive[keep]])
        hit_voxel.append(rows[keep])
        hit_entry.append(t_enter[alive[keep]])
        hit_exit.append(t_next[keep])

        t_enter[alive] = t_next
        voxel[alive, axis] += step[alive, axis]
        t_max[alive, axis] += t_delta[alive, axis]
        alive = alive[t_next < t_end[alive]]

    ray = np.concatenate(hit_ray)
    order = np.lexsort((np.concatenate(hit_entry), ray))
    return RayHits(
        ray=ray[order],
        voxel=np.concatenate(hit_voxel)[order],
        entry=np.concatenate(hit_entry)[order],
        exit=np.concatenate(hit_exit)[order],
    )


def sample_hits(
    hits: RayHits,
    origins: np.ndarray,
    directions: np.ndarray,
    samples_per_voxel: int,
    rng: np.random.Generator | None = None,
) -> RaySamples:
    """
    S samples per voxel crossing: t_k = entry + (k + u) * delta, delta = (exit - entry) / S.

    u = 0.5 (midpoints) without an rng, u ~ U(0, 1) per sample with one.
    """
    s = samples_per_voxel
    delta = np.repeat((hits.exit - hits.entry) / s, s)
    entry = np.repeat(hits.entry, s)
    k = np.tile(np.arange(s, dtype=np.float64), len(hits))
    u = rng.random(len(k)) if rng is not None else np.full(len(k), 0.5)
    t = entry + (k + u) * delta
    ray = np.repeat(hits.ray, s)
    dirs = np.asarray(directions, dtype=np.float64)[ray]
    positions = np.asarray(origins, dtype=np.float64)[ray] + t[:, None] * dirs
    return RaySamples(ray=ray, t=t, delta=delta, positions=positions, directions=dirs)


def sample_ray(
    ray: Ray,
    grid: SparseVoxelGrid,
    near: float,
    far: float,
    samples_per_voxel: int = 4,
    rng: np.random.Generator | None = None,
) -> list[RaySample]:
    """Ordered samples along one ray; empty when it crosses no active voxel."""
    if not 0 <= near < far:
        raise ValueError(f"need 0 <= near < far, got near={near}, far={far}")
    hits = traverse_rays(ray.origin[None], ray.direction[None], grid, near, far)
    samples = sample_hits(hits, ray.origin[None], ray.direction[None], samples_per_voxel, rng)
    return [RaySample(p, float(t), float(dt)) for p, t, dt in zip(samples.positions, samples.t, samples.delta)]


# =============================================================================
# DECODING
# =============================================================================


def _decoder_trunk(grid, points, params, arch, tape):
    trunk_spec, _, _ = decoder_specs(arch)
    feature, empty = trilinear_sample(grid, points)
    record(tape, "trilinear_sample", feature, grid.features)
    encoded = positional_encoding(feature, arch.positional_frequencies, tape)
    return mlp_forward(params, DECODER_TRUNK, trunk_spec, encoded, tape), empty


def decode_radiance(
    grid: SparseVoxelGrid,
    points: torch.Tensor | np.ndarray,
    directions: torch.Tensor | np.ndarray,
    params: ParameterStore,
    arch: ArchitectureConfig,
    tape: Tape | None = None,
) -> RadianceOutput:
    """
    sigma, color = R(x, d, V(x)) for a batch of points.

    The density head sees only the encoded feature; the color head also
    sees the unit direction d.
    """
    dtype = grid.features.dtype
    points = torch.as_tensor(points, dtype=dtype).reshape(-1, 3)
    directions = torch.as_tensor(directions, dtype=dtype).reshape(-1, 3)
    norms = directions.norm(dim=-1)
    if directions.numel() and float((norms - 1).abs().max()) > 1e-6:
        raise ValueError("decode_radiance expects unit directions")
    _, sigma_spec, color_spec = decoder_specs(arch)
    hidden, empty = _decoder_trunk(grid, points, params, arch, tape)
    sigma = mlp_forward(params, DECODER_SIGMA, sigma_spec, hidden, tape)[:, 0]
    color = mlp_forward(params, DECODER_COLOR, color_spec, torch.cat([hidden, directions], dim=-1), tape)
    return RadianceOutput(sigma=sigma, color=color, empty=empty)


def decode_density(
    grid: SparseVoxelGrid,
    points: torch.Tensor,
    params: ParameterStore,
    arch: ArchitectureConfig,
    tape: Tape | None = None,
) -> torch.Tensor:
    """Density head only."""
    _, sigma_spec, _ = decoder_specs(arch)
    hidden, _ = _decoder_trunk(grid, points, params, arch, tape)
    return mlp_forward(params, DECODER_SIGMA, sigma_spec, hidden, tape)[:, 0]


def make_density_probe(
    grid: SparseVoxelGrid, params: ParameterStore, arch: ArchitectureConfig
) -> Callable[[torch.Tensor], torch.Tensor]:
    """World points -> sigma from the current decoder, evaluated in chunks without gradients."""

    @torch.no_grad()
    def probe(points: torch.Tensor) -> torch.Tensor:
        points = torch.as_tensor(points, dtype=grid.features.dtype).reshape(-1, 3)
        chunks = [
            decode_density(grid, points[i : i + DENSITY_CHUNK], params, arch)
            for i in range(0, points.shape[0], DENSITY_CHUNK)
        ]
        return torch.cat(chunks) if chunks else points.new_zeros(0)

    return probe


# =============================================================================
# COMPOSITING
# =============================================================================


def composite(
    sigma: torch.Tensor,
    color: torch.Tensor,
    delta: torch.Tensor,
    t: torch.Tensor,
    background: Sequence[float] | torch.Tensor,
    mask: torch.Tensor | None = None,
) -> RenderOutput:
    """
    Alpha-composite ordered samples.

    Accepts one ray (sigma (S,), color (S, 3)) or a padded batch
    (sigma (R, S), color (R, S, 3)); `mask` marks real samples in the batch.

    Raises:
        ValueError: samples are not strictly increasing in t
    """
    single = sigma.dim() == 1
    if single:
        sigma, color, delta, t = sigma[None], color[None], delta[None], t[None]
        mask = None if mask is None else mask[None]
    if mask is None:
        mask = torch.ones_like(sigma, dtype=torch.bool)
    both = mask[:, 1:] & mask[:, :-1]
    if bool((both & (t[:, 1:] <= t[:, :-1])).any()):
        raise ValueError("samples must be ordered by increasing t")

    optical = torch.where(mask, sigma * delta, torch.zeros_like(sigma))
    alpha = 1.0 - torch.exp(-optical)
    accumulated = torch.cumsum(optical, dim=1)
    transmittance = torch.exp(-(accumulated - optical))  # exclusive
    weights = transmittance * alpha
    background = torch.as_tensor(background, dtype=sigma.dtype)

    opacity = weights.sum(dim=1)
    final = torch.exp(-accumulated[:, -1]) if sigma.shape[1] else torch.ones_like(opacity)
    rgb = (weights[..., None] * color).sum(dim=1) + final[:, None] * background
    depth = (weights * torch.where(mask, t, torch.zeros_like(t))).sum(dim=1) / opacity.clamp(min=DEPTH_EPSILON)
    out = RenderOutput(color=rgb, depth=depth, transmittance=final, opacity=opacity)
    if single:
        return RenderOutput(color=rgb[0], depth=depth[0], transmittance=final[0], opacity=opacity[0])
    return out


def _pad(values: torch.Tensor, ray: torch.Tensor, slot: torch.Tensor, rays: int, width: int) -> torch.Tensor:
    shape = (rays, width, *values.shape[1:])
    return values.new_zeros(shape).index_put((ray, slot), values)


# =============================================================================
# RENDERING
# =============================================================================


def render_pixel_batch(
    origins: np.ndarray,
    directions: np.ndarray,
    grid: SparseVoxelGrid,
    params: ParameterStore,
    arch: ArchitectureConfig,
    settings: RenderSettings,
    rng: np.random.Generator | None = None,
    tape: Tape | None = None,
) -> RenderOutput:
    """
    Render a batch of rays; outputs keep autograd history for training.

    Args:
        origins, directions: (R, 3) rays with unit directions
        rng: Jitter samples inside each voxel interval (training); midpoints if None
    """
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    directions = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    n_rays = len(origins)
    hits = traverse_rays(origins, directions, grid, settings.near, settings.far)
    samples = sample_hits(hits, origins, directions, settings.samples_per_voxel, rng)

    dtype = grid.features.dtype
    ray = torch.from_numpy(samples.ray)
    counts = torch.bincount(ray, minlength=n_rays)
    width = int(counts.max()) if len(samples) else 0
    starts = torch.cumsum(counts, 0) - counts
    slot = torch.arange(len(samples)) - starts[ray]

    if len(samples):
        radiance = decode_radiance(grid, samples.positions, samples.directions, params, arch, tape)
        sigma, color = radiance.sigma, radiance.color
    else:
        sigma, color = torch.zeros(0, dtype=dtype), torch.zeros((0, 3), dtype=dtype)

    mask = _pad(torch.ones(len(samples), dtype=torch.bool), ray, slot, n_rays, width)
    out = composite(
        _pad(sigma, ray, slot, n_rays, width),
        _pad(color, ray, slot, n_rays, width),
        _pad(torch.from_numpy(samples.delta).to(dtype), ray, slot, n_rays, width),
        _pad(torch.from_numpy(samples.t).to(dtype), ray, slot, n_rays, width),
        settings.background,
        mask,
    )
    record(tape, "composite", out.color, sigma, color)
    return out


@torch.no_grad()
def render_image(
    view: CameraView,
    grid: SparseVoxelGrid,
    params: ParameterStore,
    arch: ArchitectureConfig,
    settings: RenderSettings,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Render every pixel of a view with midpoint sampling.

    Returns:
        image (H, W, 3) in [0, 1], depth (H, W) with NaN where no surface was hit
    """
    k = view.intrinsics
    origins, directions = pixel_rays(view)
    colors, depths = [], []
    for i in range(0, len(origins), settings.chunk):
        out = render_pixel_batch(origins[i : i + settings.chunk], directions[i : i + settings.chunk], grid, params, arch, settings)
        colors.append(out.color.numpy())
        depths.append(np.where(out.depth_valid.numpy(), out.depth.numpy(), np.nan))
    image = np.concatenate(colors).reshape(k.height, k.width, 3).astype(np.float64)
    depth = np.concatenate(depths).reshape(k.height, k.width).astype(np.float64)
    logger.debug("rendered frame %d (%dx%d)", view.frame_index, k.width, k.height)
    return image, depth
