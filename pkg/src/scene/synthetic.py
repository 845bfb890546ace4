"""
Synthetic Scenes - Analytic ray-traced scenes with exact depth.

Primitives are intersected in closed form, so every generated image and
depth map doubles as an oracle for the reconstruction pipeline.

PRESETS:
    cube_room       closed room (walls, floor, ceiling), two cubes and a sphere;
                    cameras orbit inside the room looking at its center
    sphere_object   one opaque sphere on a white background, cameras orbit around it
    glossy_patch    a view-dependent square patch next to a box
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from geometry.camera import CameraIntrinsics, CameraView, look_at, pixel_rays

from .dataset import SceneDataset
from .image_io import quantize

logger = logging.getLogger(__name__)

HIT_EPSILON = 1e-9


# =============================================================================
# PRIMITIVES
# =============================================================================


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    color: tuple[float, float, float]

    def intersect(self, origins: np.ndarray, directions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Nearest positive hit distance (inf on miss) and outward normals."""
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            t_a = (lo - origins) / directions
            t_b = (hi - origins) / directions
        t_min = np.where(directions == 0, np.where((origins >= lo) & (origins <= hi), -np.inf, np.inf), np.minimum(t_a, t_b))
        t_max = np.where(directions == 0, np.where((origins >= lo) & (origins <= hi), np.inf, -np.inf), np.maximum(t_a, t_b))
        t_near, t_far = t_min.max(axis=1), t_max.min(axis=1)
        hit = (t_near <= t_far) & (t_far > HIT_EPSILON)
        t = np.where(t_near > HIT_EPSILON, t_near, t_far)
        t = np.where(hit, t, np.inf)

        points = origins + np.where(np.isfinite(t), t, 0.0)[:, None] * directions
        distance = np.concatenate([np.abs(points - lo), np.abs(points - hi)], axis=1)
        face = np.argmin(distance, axis=1)
        normals = np.zeros_like(points)
        normals[np.arange(len(face)), face % 3] = np.where(face < 3, -1.0, 1.0)
        return t, normals

    def view_color(self, directions: np.ndarray, normals: np.ndarray) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.color, dtype=np.float64), directions.shape)


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float
    color: tuple[float, float, float]

    def intersect(self, origins: np.ndarray, directions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        offset = origins - np.asarray(self.center)
        b = np.sum(offset * directions, axis=1)
        c = np.sum(offset * offset, axis=1) - self.radius**2
        disc = b * b - c
        root = np.sqrt(np.maximum(disc, 0.0))
        t_near, t_far = -b - root, -b + root
        t = np.where(t_near > HIT_EPSILON, t_near, t_far)
        t = np.where((disc >= 0) & (t > HIT_EPSILON), t, np.inf)
        points = origins + np.where(np.isfinite(t), t, 0.0)[:, None] * directions
        normals = (points - np.asarray(self.center)) / self.radius
        return t, normals

    def view_color(self, directions: np.ndarray, normals: np.ndarray) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.color, dtype=np.float64), directions.shape)


@dataclass(frozen=True)
class GlossyPatch:
    """
    Axis-aligned square whose color depends on the viewing angle:
    color = (1 - w) * base + w * highlight, w = |cos(angle between d and normal)|^sharpness.
    """

    center: tuple[float, float, float]
    axis: int  # normal axis
    half_size: float
    color: tuple[float, float, float]
    highlight: tuple[float, float, float] = (1.0, 1.0, 1.0)
    sharpness: float = 4.0

    def intersect(self, origins: np.ndarray, directions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        center = np.asarray(self.center)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (center[self.axis] - origins[:, self.axis]) / directions[:, self.axis]
        t = np.where(np.isfinite(t) & (t > HIT_EPSILON), t, np.inf)
        points = origins + np.where(np.isfinite(t), t, 0.0)[:, None] * directions
        others = [a for a in range(3) if a != self.axis]
        inside = np.all(np.abs(points[:, others] - center[others]) <= self.half_size, axis=1)
        t = np.where(inside, t, np.inf)
        normals = np.zeros_like(points)
        normals[:, self.axis] = 1.0
        return t, normals

    def view_color(self, directions: np.ndarray, normals: np.ndarray) -> np.ndarray:
        w = np.abs(np.sum(directions * normals, axis=1)) ** self.sharpness
        base, highlight = np.asarray(self.color), np.asarray(self.highlight)
        return (1 - w)[:, None] * base + w[:, None] * highlight


Primitive = Box | Sphere | GlossyPatch


@dataclass(frozen=True)
class Trajectory:
    """Cameras on a horizontal circular arc, all looking at `target`."""

    center: tuple[float, float, float] = (0.0, 0.0, 1.0)
    radius: float = 1.0
    start_angle: float = 0.0
    arc: float = np.pi
    target: tuple[float, float, float] = (0.0, 0.0, 0.5)
    fov_degrees: float = 60.0

    def poses(self, n_frames: int, phase: float = 0.0):
        steps = max(n_frames - 1, 1) if self.arc < 2 * np.pi else n_frames
        angles = self.start_angle + phase + self.arc * np.arange(n_frames) / steps
        cx, cy, cz = self.center
        return [
            look_at((cx + self.radius * np.cos(a), cy + self.radius * np.sin(a), cz), self.target)
            for a in angles
        ]


@dataclass(frozen=True)
class SyntheticScene:
    name: str
    primitives: tuple[Primitive, ...]
    room: tuple[tuple[float, float, float], tuple[float, float, float]]
    trajectory: Trajectory
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    light: tuple[float, float, float] = (0.3, 0.5, 1.0)
    ambient: float = 0.35
    shading: Literal["lambert", "flat"] = "lambert"
    near: float = 0.05
    far: float = 6.0
    seed: int = 0
    heldout_every: int = 4
    phase_jitter: float = field(default=0.05)

    def __post_init__(self):
        lo, hi = (np.asarray(v) for v in self.room)
        if np.any(lo >= hi):
            raise ValueError("room extent is empty")
        for primitive in self.primitives:
            if isinstance(primitive, Box):
                inside = np.all(np.asarray(primitive.lo) >= lo - 1e-9) and np.all(np.asarray(primitive.hi) <= hi + 1e-9)
            elif isinstance(primitive, Sphere):
                c = np.asarray(primitive.center)
                inside = np.all(c - primitive.radius >= lo - 1e-9) and np.all(c + primitive.radius <= hi + 1e-9)
            else:
                inside = np.all(np.asarray(primitive.center) >= lo) and np.all(np.asarray(primitive.center) <= hi)
            if not inside:
                raise ValueError(f"{type(primitive).__name__} lies outside the room extent")


# =============================================================================
# PRESETS
# =============================================================================


def _room_shell(lo, hi, thickness=0.05):
    (x0, y0, z0), (x1, y1, z1) = lo, hi
    t = thickness
    return (
        Box((x0, y0, z0), (x1, y1, z0 + t), (0.55, 0.45, 0.35)),  # floor
        Box((x0, y0, z1 - t), (x1, y1, z1), (0.85, 0.85, 0.80)),  # ceiling
        Box((x0, y0, z0), (x0 + t, y1, z1), (0.70, 0.30, 0.30)),
        Box((x1 - t, y0, z0), (x1, y1, z1), (0.30, 0.60, 0.35)),
        Box((x0, y0, z0), (x1, y0 + t, z1), (0.30, 0.40, 0.75)),
        Box((x0, y1 - t, z0), (x1, y1, z1), (0.80, 0.75, 0.30)),
    )


def cube_room(seed: int = 0) -> SyntheticScene:
    rng = np.random.default_rng(seed)
    lo, hi = (-1.6, -1.6, 0.0), (1.6, 1.6, 2.0)
    shift = rng.uniform(-0.05, 0.05, size=2)
    primitives = _room_shell(lo, hi) + (
        Box((-0.5 + shift[0], -0.4, 0.05), (-0.1 + shift[0], 0.0, 0.45), (0.9, 0.2, 0.2)),
        Box((0.15, 0.1 + shift[1], 0.05), (0.45, 0.4 + shift[1], 0.35), (0.2, 0.3, 0.9)),
        Sphere((0.1, -0.5, 0.3), 0.25, (0.95, 0.85, 0.2)),
    )
    return SyntheticScene(
        name="cube_room",
        primitives=primitives,
        room=(lo, hi),
        trajectory=Trajectory(center=(0.0, 0.0, 1.0), radius=1.1, arc=np.pi, target=(0.0, 0.0, 0.3)),
        background=(0.0, 0.0, 0.0),
        seed=seed,
    )


def sphere_object(seed: int = 0) -> SyntheticScene:
    return SyntheticScene(
        name="sphere_object",
        primitives=(Sphere((0.0, 0.0, 0.0), 0.5, (0.85, 0.35, 0.25)),),
        room=((-0.7, -0.7, -0.7), (0.7, 0.7, 0.7)),
        trajectory=Trajectory(center=(0.0, 0.0, 0.6), radius=2.0, arc=2 * np.pi, target=(0.0, 0.0, 0.0), fov_degrees=45.0),
        background=(1.0, 1.0, 1.0),
        near=0.5,
        far=4.0,
        seed=seed,
    )


def glossy_patch(seed: int = 0) -> SyntheticScene:
    return SyntheticScene(
        name="glossy_patch",
        primitives=(
            GlossyPatch((0.0, 0.0, 0.0), axis=2, half_size=0.4, color=(0.2, 0.3, 0.6)),
            Box((0.45, -0.2, 0.0), (0.75, 0.1, 0.3), (0.9, 0.6, 0.2)),
        ),
        room=((-1.0, -1.0, -0.2), (1.0, 1.0, 1.0)),
        trajectory=Trajectory(center=(0.0, 0.0, 1.2), radius=1.3, start_angle=-np.pi / 2, arc=np.pi, target=(0.0, 0.0, 0.0)),
        background=(0.0, 0.0, 0.0),
        near=0.3,
        far=4.0,
        seed=seed,
    )


PRESETS = {"cube_room": cube_room, "sphere_object": sphere_object, "glossy_patch": glossy_patch}


def preset(name: str, seed: int = 0) -> SyntheticScene:
    try:
        return PRESETS[name](seed)
    except KeyError:
        raise ValueError(f"unknown synthetic scene {name!r}; choose from {sorted(PRESETS)}") from None


# =============================================================================
# RENDERING
# =============================================================================


def trace(scene: SyntheticScene, origins: np.ndarray, directions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Exact colors and hit distances for unit-direction rays.

    Returns:
        colors (N, 3), distance along the ray (N,) with NaN on a miss
    """
    n = len(origins)
    best = np.full(n, np.inf)
    colors = np.broadcast_to(np.asarray(scene.background, dtype=np.float64), (n, 3)).copy()
    light = np.asarray(scene.light, dtype=np.float64)
    light = light / np.linalg.norm(light)
    for primitive in scene.primitives:
        t, normals = primitive.intersect(origins, directions)
        closer = t < best
        if not closer.any():
            continue
        best = np.where(closer, t, best)
        normals = normals[closer]
        facing = np.sum(normals * directions[closer], axis=1) > 0
        normals[facing] *= -1.0
        base = primitive.view_color(directions[closer], normals)
        if scene.shading == "flat":
            colors[closer] = base
        else:
            lambert = np.maximum(np.sum(normals * light, axis=1), 0.0)
            colors[closer] = base * (scene.ambient + (1 - scene.ambient) * lambert)[:, None]
    depth = np.where(np.isfinite(best), best, np.nan)
    return np.clip(colors, 0.0, 1.0), depth


def intrinsics_for(width: int, height: int, fov_degrees: float) -> CameraIntrinsics:
    focal = 0.5 * width / np.tan(np.radians(fov_degrees) / 2)
    return CameraIntrinsics(fx=focal, fy=focal, cx=width / 2, cy=height / 2, width=width, height=height)


def generate_synthetic(
    scene: SyntheticScene | str,
    resolution: int | Sequence[int] = 64,
    n_frames: int = 12,
    seed: int | None = None,
) -> SceneDataset:
    """
    Render a synthetic scene along its trajectory.

    Images are quantized to 8-bit levels so they survive PNG export exactly;
    depth is the exact distance along each pixel's unit ray (NaN on a miss).
    Every `heldout_every`-th frame (offset by half that stride) is held out.
    """
    if isinstance(scene, str):
        scene = preset(scene, seed or 0)
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    width, height = (resolution, resolution) if isinstance(resolution, int) else tuple(resolution)
    rng = np.random.default_rng(scene.seed if seed is None else seed)
    phase = float(rng.uniform(-scene.phase_jitter, scene.phase_jitter))
    intrinsics = intrinsics_for(width, height, scene.trajectory.fov_degrees)

    views, depths = [], []
    for index, pose in enumerate(scene.trajectory.poses(n_frames, phase)):
        view = CameraView(np.zeros((height, width, 3)), intrinsics, pose, frame_index=index)
        origins, directions = pixel_rays(view)
        colors, depth = trace(scene, origins, directions)
        views.append(CameraView(quantize(colors.reshape(height, width, 3)), intrinsics, pose, frame_index=index))
        depths.append(depth.reshape(height, width))

    every = scene.heldout_every
    heldout = [i for i in range(n_frames) if every and n_frames > 2 and i % every == every // 2]
    train = [i for i in range(n_frames) if i not in heldout]
    logger.info("generated %s: %d frames at %dx%d", scene.name, n_frames, width, height)
    return SceneDataset(
        name=scene.name,
        views=views,
        near=scene.near,
        far=scene.far,
        bounds=(np.asarray(scene.room[0], dtype=np.float64), np.asarray(scene.room[1], dtype=np.float64)),
        train=train,
        heldout=heldout,
        key_frame_stride=1,
        background=scene.background,
        depths=depths,
    )
