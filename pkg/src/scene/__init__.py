"""
Scene - Datasets, manifests, synthetic scenes and quality metrics.
"""

from .dataset import (
    CONVENTION,
    SCHEMA,
    ImageDimensionError,
    ManifestError,
    SceneDataset,
    SceneError,
    SceneFileNotFoundError,
    export_scene,
    load_scene,
)
from .image_io import quantize, read_depth, read_png, write_depth, write_png
from .quality import DepthMetrics, depth_metrics, psnr, ssim
from .synthetic import (
    PRESETS,
    Box,
    GlossyPatch,
    Sphere,
    SyntheticScene,
    Trajectory,
    generate_synthetic,
    preset,
    trace,
)

__all__ = [
    "CONVENTION",
    "PRESETS",
    "SCHEMA",
    "Box",
    "DepthMetrics",
    "GlossyPatch",
    "ImageDimensionError",
    "ManifestError",
    "SceneDataset",
    "SceneError",
    "SceneFileNotFoundError",
    "Sphere",
    "SyntheticScene",
    "Trajectory",
    "depth_metrics",
    "export_scene",
    "generate_synthetic",
    "load_scene",
    "preset",
    "psnr",
    "quantize",
    "read_depth",
    "read_png",
    "ssim",
    "trace",
    "write_depth",
    "write_png",
]
