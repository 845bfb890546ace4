"""
Scene Dataset - Ordered posed views plus their JSON manifest.

MANIFEST (schema "voxfuse.scene/1"):
    {
      "schema": "voxfuse.scene/1",
      "convention": "...",               # pose and pixel conventions, human readable
      "name": "cube_room",
      "units": "meters",
      "near": 0.05, "far": 6.0,
      "bounds": {"min": [x, y, z], "max": [x, y, z]},
      "key_frame_stride": 1,
      "background": [r, g, b],
      "split": {"train": [frame indices], "heldout": [frame indices]},
      "frames": [
        {"index": 0, "image": "images/000.png", "depth": "depth/000.npy",
         "intrinsics": {"fx", "fy", "cx", "cy", "width", "height"},
         "pose": [16 floats, camera-to-world, row-major]}
      ]
    }
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from geometry.camera import CameraIntrinsics, CameraPose, CameraView, InvalidIntrinsicsError, InvalidPoseError
from grid.sparse_grid import GridSpec

from .image_io import read_depth, read_png, write_depth, write_png

logger = logging.getLogger(__name__)

SCHEMA = "voxfuse.scene/1"
CONVENTION = (
    "pose: camera-to-world 4x4, row-major; camera frame x right, y down, z forward; "
    "pixel (0,0) is the top-left corner of the top-left pixel, centers at +0.5; units: meters"
)


class SceneError(Exception):
    """Base class for scene loading errors."""


class SceneFileNotFoundError(SceneError, FileNotFoundError):
    """A manifest, image or depth file does not exist."""


class ImageDimensionError(SceneError, ValueError):
    """An image does not match its intrinsics."""


class ManifestError(SceneError, ValueError):
    """The manifest is malformed or violates a scene invariant."""


@dataclass
class SceneDataset:
    """
    Ordered frame sequence with its split and scene extent.

    `train` and `heldout` hold positions into `views`.
    """

    name: str
    views: list[CameraView]
    near: float
    far: float
    bounds: tuple[np.ndarray, np.ndarray]
    train: list[int]
    heldout: list[int] = field(default_factory=list)
    key_frame_stride: int = 1
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    depths: list[np.ndarray | None] | None = None

    def __post_init__(self):
        if not self.views:
            raise ManifestError("a scene needs at least one frame")
        if not 0 <= self.near < self.far:
            raise ManifestError(f"need 0 <= near < far, got near={self.near}, far={self.far}")
        if set(self.train) & set(self.heldout):
            raise ManifestError("train and heldout splits overlap")
        for position in [*self.train, *self.heldout]:
            if not 0 <= position < len(self.views):
                raise ManifestError(f"split position {position} outside {len(self.views)} frames")
        if not self.train:
            raise ManifestError("the train split is empty")
        if self.key_frame_stride < 1:
            raise ManifestError("key_frame_stride must be >= 1")
        lo, hi = (np.asarray(b, dtype=np.float64) for b in self.bounds)
        if np.any(lo >= hi):
            raise ManifestError(f"scene bounds are empty: {lo.tolist()} .. {hi.tolist()}")
        self.bounds = (lo, hi)

    def __len__(self) -> int:
        return len(self.views)

    @property
    def train_views(self) -> list[CameraView]:
        return [self.views[i] for i in self.train]

    @property
    def heldout_views(self) -> list[CameraView]:
        return [self.views[i] for i in self.heldout]

    def key_frames(self, stride: int | None = None) -> list[int]:
        """Uniform-stride key frames as positions into train_views."""
        return list(range(0, len(self.train), stride or self.key_frame_stride))

    def depth_for(self, position: int) -> np.ndarray | None:
        return None if self.depths is None else self.depths[position]

    def grid_spec(self, voxel_size: float, channels: int) -> GridSpec:
        """Lattice anchored at the scene AABB minimum."""
        return GridSpec(origin=tuple(self.bounds[0]), voxel_size=voxel_size, channels=channels)


# =============================================================================
# LOADING
# =============================================================================


def _require(data: dict, key: str, where: str) -> Any:
    if key not in data:
        raise ManifestError(f"{where}: missing required field {key!r}")
    return data[key]


def _resolve(root: Path, relative: str, what: str) -> Path:
    path = root / relative
    if not path.exists():
        raise SceneFileNotFoundError(f"{what} not found: {path}")
    return path


def load_scene(manifest_path: str | Path) -> SceneDataset:
    """
    Load a manifest and decode every image to [0, 1] floats.

    Raises:
        SceneFileNotFoundError: manifest, image or depth file missing
        InvalidPoseError: a pose is not a rigid transform (message names the frame)
        ImageDimensionError: an image does not match its intrinsics
        ManifestError: anything else malformed
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise SceneFileNotFoundError(f"manifest not found: {manifest_path}")
    try:
        data = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise ManifestError(f"{manifest_path}: invalid JSON ({e})") from e
    if data.get("schema") != SCHEMA:
        raise ManifestError(f"{manifest_path}: unsupported schema {data.get('schema')!r}, expected {SCHEMA!r}")

    root = manifest_path.parent
    frames = sorted(_require(data, "frames", "manifest"), key=lambda f: f.get("index", 0))
    views, depths, indices = [], [], []
    for frame in frames:
        index = int(_require(frame, "index", "frame"))
        where = f"frame {index}"
        try:
            intrinsics = CameraIntrinsics(**_require(frame, "intrinsics", where))
        except (TypeError, InvalidIntrinsicsError) as e:
            raise ManifestError(f"{where}: invalid intrinsics ({e})") from e
        try:
            pose = CameraPose.from_matrix(_require(frame, "pose", where))
        except InvalidPoseError as e:
            raise InvalidPoseError(f"{where}: {e}") from e
        except ValueError as e:
            raise ManifestError(f"{where}: pose must have 16 numbers ({e})") from e

        image = read_png(_resolve(root, _require(frame, "image", where), f"{where} image"))
        expected = (intrinsics.height, intrinsics.width)
        if image.shape[:2] != expected:
            raise ImageDimensionError(f"{where}: image is {image.shape[1]}x{image.shape[0]}, intrinsics say {expected[1]}x{expected[0]}")
        views.append(CameraView(image=image, intrinsics=intrinsics, pose=pose, frame_index=index))
        depths.append(read_depth(_resolve(root, frame["depth"], f"{where} depth")) if frame.get("depth") else None)
        indices.append(index)

    if len(set(indices)) != len(indices):
        raise ManifestError("frame indices must be unique")
    position = {index: i for i, index in enumerate(indices)}
    split = data.get("split", {})
    try:
        train = [position[i] for i in split.get("train", indices)]
        heldout = [position[i] for i in split.get("heldout", [])]
    except KeyError as e:
        raise ManifestError(f"split references unknown frame {e.args[0]}") from e

    bounds = _require(data, "bounds", "manifest")
    dataset = SceneDataset(
        name=data.get("name", manifest_path.parent.name),
        views=views,
        near=float(_require(data, "near", "manifest")),
        far=float(_require(data, "far", "manifest")),
        bounds=(np.asarray(bounds["min"], dtype=np.float64), np.asarray(bounds["max"], dtype=np.float64)),
        train=train,
        heldout=heldout,
        key_frame_stride=int(data.get("key_frame_stride", 1)),
        background=tuple(float(c) for c in data.get("background", (0.0, 0.0, 0.0))),
        depths=depths if any(d is not None for d in depths) else None,
    )
    logger.info("loaded scene %s: %d frames (%d train, %d heldout)", dataset.name, len(views), len(train), len(heldout))
    return dataset


# =============================================================================
# EXPORT
# =============================================================================


def manifest_dict(dataset: SceneDataset, image_paths: Sequence[str], depth_paths: Sequence[str | None]) -> dict:
    return {
        "schema": SCHEMA,
        "convention": CONVENTION,
        "name": dataset.name,
        "units": "meters",
        "near": dataset.near,
        "far": dataset.far,
        "bounds": {"min": dataset.bounds[0].tolist(), "max": dataset.bounds[1].tolist()},
        "key_frame_stride": dataset.key_frame_stride,
        "background": list(dataset.background),
        "split": {
            "train": [dataset.views[i].frame_index for i in dataset.train],
            "heldout": [dataset.views[i].frame_index for i in dataset.heldout],
        },
        "frames": [
            {
                "index": view.frame_index,
                "image": image,
                "depth": depth,
                "intrinsics": view.intrinsics.to_dict(),
                "pose": view.pose.matrix().reshape(-1).tolist(),
            }
            for view, image, depth in zip(dataset.views, image_paths, depth_paths)
        ],
    }


def export_scene(dataset: SceneDataset, directory: str | Path) -> Path:
    """Write images/*.png, depth/*.npy and manifest.json; returns the manifest path."""
    directory = Path(directory)
    image_paths, depth_paths = [], []
    for position, view in enumerate(dataset.views):
        image_rel = f"images/{view.frame_index:04d}.png"
        write_png(directory / image_rel, view.image)
        image_paths.append(image_rel)
        depth = dataset.depth_for(position)
        if depth is None:
            depth_paths.append(None)
            continue
        depth_rel = f"depth/{view.frame_index:04d}.npy"
        write_depth(directory / depth_rel, depth)
        depth_paths.append(depth_rel)

    manifest_path = directory / "manifest.json"
    manifest_path.write_text(json.dumps(manifest_dict(dataset, image_paths, depth_paths), indent=2))
    return manifest_path
