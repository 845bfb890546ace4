"""
Camera Geometry - Pinhole cameras, projection, frustum voxels and neighbor views.

COORDINATE CONVENTIONS:
    World frame: right-handed, meters.
    Camera frame: x right, y down, z forward (into the scene).
    Poses are stored camera-to-world; world-to-camera is derived on demand.
    Pixels: (0, 0) is the top-left corner of the top-left pixel, so the
    center of pixel (col, row) is at (col + 0.5, row + 0.5).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Literal, Sequence

import numpy as np

if TYPE_CHECKING:
    from grid.sparse_grid import GridSpec

logger = logging.getLogger(__name__)

ORTHONORMAL_TOLERANCE = 1e-6
UNIT_TOLERANCE = 1e-9


class InvalidIntrinsicsError(ValueError):
    """Intrinsics violate fx, fy > 0 or principal point inside the image."""


class InvalidPoseError(ValueError):
    """Rotation is not orthonormal with determinant +1."""


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidIntrinsicsError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width < 1 or self.height < 1:
            raise InvalidIntrinsicsError(f"image size must be positive, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidIntrinsicsError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]],
            dtype=np.float64,
        )

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }


@dataclass(frozen=True, eq=False)
class CameraPose:
    """Camera-to-world rigid transform."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        error = np.linalg.norm(rotation.T @ rotation - np.eye(3))
        if not error < ORTHONORMAL_TOLERANCE:
            raise InvalidPoseError(f"rotation is not orthonormal (|R^T R - I| = {error:.3g})")
        if np.linalg.det(rotation) <= 0:
            raise InvalidPoseError("rotation has negative determinant (reflection)")
        rotation.flags.writeable = False
        translation.flags.writeable = False
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @classmethod
    def from_matrix(cls, matrix: np.ndarray | Sequence[float]) -> "CameraPose":
        """Build from a 4x4 (or flat row-major 16-element) camera-to-world matrix."""
        m = np.asarray(matrix, dtype=np.float64).reshape(4, 4)
        if not np.allclose(m[3], [0.0, 0.0, 0.0, 1.0]):
            raise InvalidPoseError(f"last row of a rigid transform must be [0, 0, 0, 1], got {m[3].tolist()}")
        return cls(rotation=m[:3, :3], translation=m[:3, 3])

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls(rotation=np.eye(3), translation=np.zeros(3))

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def world_to_camera(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.T
        m[:3, 3] = -self.rotation.T @ self.translation
        return m

    @property
    def center(self) -> np.ndarray:
        return self.translation

    @property
    def forward(self) -> np.ndarray:
        return self.rotation[:, 2]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CameraPose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )


@dataclass(frozen=True, eq=False)
class CameraView:
    image: np.ndarray
    intrinsics: CameraIntrinsics
    pose: CameraPose
    frame_index: int = 0

    def __post_init__(self):
        image = np.asarray(self.image, dtype=np.float64)
        expected = (self.intrinsics.height, self.intrinsics.width, 3)
        if image.shape != expected:
            raise ValueError(f"image shape {image.shape} does not match intrinsics {expected}")
        image.flags.writeable = False
        object.__setattr__(self, "image", image)


@dataclass(frozen=True, eq=False)
class Ray:
    origin: np.ndarray
    direction: np.ndarray = field(repr=True)

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        direction = np.asarray(self.direction, dtype=np.float64).reshape(3)
        norm = np.linalg.norm(direction)
        if abs(norm - 1.0) > UNIT_TOLERANCE:
            raise ValueError(f"ray direction must be unit length, got norm {norm}")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "direction", direction)

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


@dataclass(frozen=True)
class Projection:
    """Result of projecting one world point; flags instead of clamping."""

    pixel: np.ndarray
    depth: float
    in_front: bool
    in_frame: bool

    @property
    def visible(self) -> bool:
        return self.in_front and self.in_frame


# =============================================================================
# PROJECTION
# =============================================================================


def project_points(points: np.ndarray, view: CameraView) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Project world points into a view.

    Args:
        points: (N, 3) world points
        view: Camera to project into

    Returns:
        pixels (N, 2), camera-frame depths (N,), visibility mask (N,) where
        visible means depth > 0 and the pixel lies inside the image bounds.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    rotation, center = view.pose.rotation, view.pose.translation
    cam = (pts - center) @ rotation  # == (R^T (p - c))^T
    depth = cam[:, 2]
    k = view.intrinsics
    with np.errstate(divide="ignore", invalid="ignore"):
        u = k.fx * cam[:, 0] / depth + k.cx
        v = k.fy * cam[:, 1] / depth + k.cy
    pixels = np.stack([u, v], axis=1)
    in_front = depth > 0
    in_frame = (u >= 0) & (u < k.width) & (v >= 0) & (v < k.height)
    return pixels, depth, in_front & in_frame


def project(x: np.ndarray, view: CameraView) -> Projection:
    """Project a single world point, reporting behind-camera and out-of-frame flags."""
    pixels, depth, _ = project_points(np.asarray(x).reshape(1, 3), view)
    k = view.intrinsics
    u, v = pixels[0]
    in_front = bool(depth[0] > 0)
    in_frame = bool(in_front and 0 <= u < k.width and 0 <= v < k.height)
    return Projection(pixel=pixels[0], depth=float(depth[0]), in_front=in_front, in_frame=in_frame)


def unproject(view: CameraView, pixel: np.ndarray, depth: float | np.ndarray) -> np.ndarray:
    """Lift pixel(s) at camera-frame depth(s) back to world points."""
    px = np.asarray(pixel, dtype=np.float64).reshape(-1, 2)
    d = np.broadcast_to(np.asarray(depth, dtype=np.float64), px.shape[:1])
    k = view.intrinsics
    cam = np.stack([(px[:, 0] - k.cx) / k.fx * d, (px[:, 1] - k.cy) / k.fy * d, d], axis=1)
    world = cam @ view.pose.rotation.T + view.pose.translation
    return world[0] if np.ndim(pixel) == 1 else world


def _directions_for_pixels(view: CameraView, pixels: np.ndarray) -> np.ndarray:
    k = view.intrinsics
    cam = np.stack(
        [(pixels[:, 0] - k.cx) / k.fx, (pixels[:, 1] - k.cy) / k.fy, np.ones(len(pixels))],
        axis=1,
    )
    world = cam @ view.pose.rotation.T
    return world / np.linalg.norm(world, axis=1, keepdims=True)


def ray_for_pixel(view: CameraView, pixel: np.ndarray) -> Ray:
    """
    Ray from the camera center through a (continuous) pixel location.

    Args:
        view: Source camera
        pixel: (u, v) in pixel units; use (col + 0.5, row + 0.5) for pixel centers

    Raises:
        ValueError: pixel outside [0, width] x [0, height]
    """
    px = np.asarray(pixel, dtype=np.float64).reshape(2)
    k = view.intrinsics
    if not (0 <= px[0] <= k.width and 0 <= px[1] <= k.height):
        raise ValueError(f"pixel {px.tolist()} outside {k.width}x{k.height} image")
    direction = _directions_for_pixels(view, px.reshape(1, 2))[0]
    return Ray(origin=view.pose.center.copy(), direction=direction)


def pixel_centers(width: int, height: int) -> np.ndarray:
    """All pixel centers in row-major order, shape (height * width, 2)."""
    cols, rows = np.meshgrid(np.arange(width), np.arange(height))
    return np.stack([cols.ravel() + 0.5, rows.ravel() + 0.5], axis=1).astype(np.float64)


def pixel_rays(view: CameraView, pixel_indices: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """
    Rays through pixel centers.

    Args:
        view: Source camera
        pixel_indices: Optional flat row-major pixel indices; all pixels if None

    Returns:
        origins (N, 3), unit directions (N, 3)
    """
    k = view.intrinsics
    centers = pixel_centers(k.width, k.height)
    if pixel_indices is not None:
        centers = centers[np.asarray(pixel_indices)]
    directions = _directions_for_pixels(view, centers)
    origins = np.broadcast_to(view.pose.center, directions.shape).copy()
    return origins, directions


def look_at(eye: Sequence[float], target: Sequence[float], up: Sequence[float] = (0.0, 0.0, 1.0)) -> CameraPose:
    """Camera-to-world pose at `eye` looking toward `target` (camera y points down)."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(right) < 1e-9:
        raise ValueError("viewing direction is parallel to the up vector")
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    return CameraPose(rotation=np.stack([right, down, forward], axis=1), translation=eye)


# =============================================================================
# FRUSTUM VOXELS
# =============================================================================


def _frustum_corners(view: CameraView, max_depth: float) -> np.ndarray:
    k = view.intrinsics
    corners = np.array([[0, 0], [k.width, 0], [0, k.height], [k.width, k.height]], dtype=np.float64)
    far = unproject(view, corners, max_depth)
    return np.vstack([view.pose.center[None], far])


def visible_mask(points: np.ndarray, view: CameraView, max_depth: float) -> np.ndarray:
    """Points that project inside the image with camera depth in (0, max_depth]."""
    _, depth, visible = project_points(points, view)
    return visible & (depth <= max_depth)


def frustum_voxels(
    views: Sequence[CameraView],
    spec: "GridSpec",
    max_depth: float,
    bounds: tuple[np.ndarray, np.ndarray] | None = None,
) -> np.ndarray:
    """
    Voxels whose centers are visible from at least one view.

    Args:
        views: K >= 1 camera views
        spec: Grid origin and voxel size
        max_depth: Frustum truncation depth d_max (meters)
        bounds: Optional (min, max) scene AABB intersected with the frustum box

    Returns:
        (M, 3) int64 voxel coordinates sorted lexicographically (M may be 0)
    """
    if len(views) < 1:
        raise ValueError("frustum_voxels needs at least one view")
    if max_depth <= 0:
        raise ValueError(f"max_depth must be positive, got {max_depth}")

    origin = np.asarray(spec.origin, dtype=np.float64)
    size = spec.voxel_size
    corners = np.vstack([_frustum_corners(view, max_depth) for view in views])
    lo, hi = corners.min(axis=0), corners.max(axis=0)
    if bounds is not None:
        lo = np.maximum(lo, np.asarray(bounds[0], dtype=np.float64))
        hi = np.minimum(hi, np.asarray(bounds[1], dtype=np.float64))
        if np.any(lo > hi):
            return np.zeros((0, 3), dtype=np.int64)

    # voxel c covers [origin + c*size, origin + (c+1)*size); centers inside [lo, hi] need these ranges
    first = np.floor((lo - origin) / size - 0.5).astype(np.int64)
    last = np.ceil((hi - origin) / size - 0.5).astype(np.int64)
    axes = [np.arange(a, b + 1, dtype=np.int64) for a, b in zip(first, last)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    centers = origin + (grid + 0.5) * size
    if bounds is not None:
        inside = np.all((centers >= lo) & (centers <= hi), axis=1)
        grid, centers = grid[inside], centers[inside]

    active = np.zeros(len(grid), dtype=bool)
    for view in views:
        active |= visible_mask(centers, view, max_depth)
    logger.debug("frustum box %s voxels, %s visible", len(grid), int(active.sum()))
    return grid[active]  # meshgrid 'ij' order is already lexicographic


# =============================================================================
# NEIGHBOR VIEWS
# =============================================================================


def _angle_between(a: np.ndarray, b: np.ndarray) -> float:
    cos = np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b))
    return float(np.arccos(np.clip(cos, -1.0, 1.0)))


def select_neighbor_views(
    t: int,
    sequence: Sequence[CameraView | CameraPose],
    k: int,
    mode: Literal["temporal", "spatial"] = "temporal",
    angle_weight: float = 0.5,
    include_self: bool = True,
) -> list[int]:
    """
    Pick the K views used to reconstruct frame t's local volume.

    Args:
        t: Position of the reference frame in `sequence`
        sequence: Ordered views (or poses)
        k: Number of views to return
        mode: "temporal" (smallest |i - t|, ties toward the smaller index) or
            "spatial" (smallest |c_i - c_t| + angle_weight * angle(f_i, f_t))
        angle_weight: Meters per radian of forward-axis angle in spatial mode
        include_self: If True the result starts with t plus K-1 neighbors;
            if False it holds K neighbors other than t

    Returns:
        K positions in `sequence`, nearest first
    """
    n = len(sequence)
    needed = k if include_self else k + 1
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if needed > n:
        raise ValueError(f"requested {k} views but the sequence has {n} frames")
    if not 0 <= t < n:
        raise ValueError(f"frame position {t} outside sequence of length {n}")

    poses = [item.pose if isinstance(item, CameraView) else item for item in sequence]
    if mode == "temporal":
        scores = [float(abs(i - t)) for i in range(n)]
    elif mode == "spatial":
        ref = poses[t]
        scores = [
            float(np.linalg.norm(p.center - ref.center)) + angle_weight * _angle_between(p.forward, ref.forward)
            for p in poses
        ]
        scores[t] = -1.0  # t always sorts first
    else:
        raise ValueError(f"unknown neighbor mode {mode!r}")

    order = sorted(range(n), key=lambda i: (i != t, scores[i], i))
    if not include_self:
        order = [i for i in order if i != t]
    return order[:k]
