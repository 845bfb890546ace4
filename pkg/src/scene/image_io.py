"""
Image I/O - 8-bit PNG colors and .npy depth maps.
"""

from pathlib import Path

import numpy as np
from PIL import Image


def quantize(image: np.ndarray) -> np.ndarray:
    """Snap [0, 1] colors to the nearest 8-bit level (values stay float)."""
    return np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0


def read_png(path: str | Path) -> np.ndarray:
    """Decode a PNG to an (H, W, 3) float64 array in [0, 1]."""
    with Image.open(path) as image:
        rgb = np.asarray(image.convert("RGB"), dtype=np.uint8)
    return rgb.astype(np.float64) / 255.0


def write_png(path: str | Path, image: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    levels = np.round(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(levels).save(path, format="PNG")
    return path


def read_depth(path: str | Path) -> np.ndarray:
    return np.load(path, allow_pickle=False).astype(np.float64)


def write_depth(path: str | Path, depth: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.save(path, np.asarray(depth, dtype=np.float64), allow_pickle=False)
    return path
