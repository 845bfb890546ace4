"""Shared fixtures: tiny architectures, cameras and synthetic scenes."""

import numpy as np
import pytest
import torch

from config import ArchitectureConfig, TrainConfig
from geometry.camera import CameraIntrinsics, CameraPose, CameraView, look_at
from hub import HubConfig, set_config
from models import build_parameter_store
from scene import generate_synthetic


@pytest.fixture(autouse=True)
def _float64_and_isolated_hub(tmp_path, monkeypatch):
    """Every test runs in f64 with run metrics written under tmp_path."""
    monkeypatch.setenv("VOXFUSE_HUB_DIR", str(tmp_path / "hub"))
    monkeypatch.setenv("VOXFUSE_PRECISION", "f64")
    set_config(HubConfig())
    previous = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(previous)
    set_config(None)


@pytest.fixture
def tiny_arch() -> ArchitectureConfig:
    return ArchitectureConfig(
        encoder_channels=(4, 6),
        encoder_strides=(2, 1),
        direction_channels=3,
        direction_layers=2,
        volume_channels=4,
        reconstruction_layers=2,
        fusion_layers=2,
        sparse_hidden_channels=4,
        positional_frequencies=2,
        decoder_width=8,
        decoder_trunk_layers=1,
        color_width=6,
    )


@pytest.fixture
def tiny_params(tiny_arch):
    return build_parameter_store(tiny_arch, seed=3, dtype=torch.float64)


@pytest.fixture
def tiny_config() -> TrainConfig:
    return TrainConfig(
        stage="local",
        iterations=2,
        rays_per_batch=32,
        neighbors=2,
        voxel_size=0.4,
        max_depth=3.0,
        samples_per_voxel=2,
        render_chunk=512,
        fusion_window=2,
        prune_warmup_iterations=0,
        subdivide_stride=2,
        eval_every=2,
        seed=11,
    )


@pytest.fixture
def intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(fx=8.0, fy=8.0, cx=4.0, cy=4.0, width=8, height=8)


@pytest.fixture
def identity_view(intrinsics) -> CameraView:
    """Camera at the origin looking down +z."""
    return CameraView(np.zeros((8, 8, 3)), intrinsics, CameraPose.identity(), frame_index=0)


@pytest.fixture
def orbit_views(intrinsics) -> list[CameraView]:
    """Four views on an arc around (0, 0, 0.5), with parallax between neighbors."""
    rng = np.random.default_rng(0)
    views = []
    for i, angle in enumerate(np.linspace(0.0, np.pi / 2, 4)):
        pose = look_at((1.5 * np.cos(angle), 1.5 * np.sin(angle), 1.0), (0.0, 0.0, 0.5))
        views.append(CameraView(rng.random((8, 8, 3)), intrinsics, pose, frame_index=i))
    return views


@pytest.fixture(scope="session")
def tiny_scene():
    """cube_room at 16x16 with 5 frames (frame 2 held out)."""
    return generate_synthetic("cube_room", resolution=16, n_frames=5, seed=0)
