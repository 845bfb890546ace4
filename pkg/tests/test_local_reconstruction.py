"""Tests for feature extraction, per-view volumes, aggregation and frame reconstruction."""

import numpy as np
import pytest
import torch

from geometry.camera import CameraView, frustum_voxels, look_at
from grid.sparse_grid import GridSpec, SparseVoxelGrid, pack_keys
from reconstruction import (
    FeatureMap,
    PerViewFeatureVolume,
    aggregate_mean_var,
    build_per_view_volume,
    encode_direction,
    extract_features,
    reconstruct_frame,
    reconstruct_local_volume,
    sample_feature_map,
)


def _volume(coords, features, frame):
    return PerViewFeatureVolume(torch.tensor(coords), torch.tensor(features, dtype=torch.float64), frame)


@pytest.fixture
def orbit_spec(tiny_arch) -> GridSpec:
    return GridSpec(origin=(-1.0, -1.0, -1.0), voxel_size=0.4, channels=tiny_arch.volume_channels)


class TestFeatureMaps:
    def test_encoder_downsamples_by_stride_product(self, identity_view, tiny_params, tiny_arch):
        feature_map = extract_features(identity_view, tiny_params, tiny_arch)
        assert feature_map.factor == 2
        assert feature_map.size == (4, 4)
        assert feature_map.channels == tiny_arch.feature_channels

    def test_pixel_centers_hit_feature_centers(self):
        features = torch.arange(12, dtype=torch.float64).reshape(1, 3, 4)
        pixels = torch.tensor([[0.5, 0.5], [3.5, 2.5], [1.5, 0.5]])
        out = sample_feature_map(FeatureMap(features, 1), pixels, (3, 4))
        torch.testing.assert_close(out[:, 0], torch.tensor([0.0, 11.0, 1.0]))

    def test_downsampled_map_is_interpolated(self):
        features = torch.tensor([[[0.0, 2.0], [4.0, 6.0]]])
        # image pixel (1, 1) is the center of feature cell (0, 0); (2, 2) sits between all four
        out = sample_feature_map(FeatureMap(features, 2), torch.tensor([[1.0, 1.0], [2.0, 2.0]]), (4, 4))
        torch.testing.assert_close(out[:, 0], torch.tensor([0.0, 3.0]))

    def test_direction_encoder_needs_unit_vectors(self, tiny_params, tiny_arch):
        out = encode_direction(torch.tensor([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]), tiny_params, tiny_arch)
        assert out.shape == (2, tiny_arch.direction_channels)
        with pytest.raises(ValueError):
            encode_direction(torch.tensor([[0.0, 0.0, 2.0]]), tiny_params, tiny_arch)


class TestPerViewVolume:
    def test_keeps_only_visible_voxels(self, identity_view, tiny_params, tiny_arch):
        spec = GridSpec(origin=(-1.0, -1.0, -1.0), voxel_size=0.5)
        active = torch.tensor([[2, 1, 4], [2, 2, 0], [2, 2, 3], [2, 2, 5], [6, 2, 3]])
        feature_map = extract_features(identity_view, tiny_params, tiny_arch)
        volume = build_per_view_volume(identity_view, feature_map, active, spec, tiny_params, tiny_arch, 2.0)
        # (2, 2, 0) sits behind the camera and (6, 2, 3) projects right of the image
        assert volume.coords.tolist() == [[2, 1, 4], [2, 2, 3], [2, 2, 5]]
        assert volume.features.shape == (3, tiny_arch.per_view_channels)
        assert volume.frame_index == 0

    def test_max_depth_cuts_far_voxels(self, identity_view, tiny_params, tiny_arch):
        spec = GridSpec(origin=(-1.0, -1.0, -1.0), voxel_size=0.5)
        feature_map = extract_features(identity_view, tiny_params, tiny_arch)
        volume = build_per_view_volume(
            identity_view, feature_map, torch.tensor([[2, 2, 5]]), spec, tiny_params, tiny_arch, 1.0
        )
        assert volume.coords.shape[0] == 0
        assert volume.features.shape == (0, tiny_arch.per_view_channels)


class TestAggregation:
    def test_mean_and_population_variance(self):
        a = _volume([[0, 0, 0], [1, 0, 0]], [[1.0, 2.0], [5.0, 5.0]], 0)
        b = _volume([[0, 0, 0]], [[3.0, 6.0]], 1)
        grid = aggregate_mean_var([a, b], GridSpec(channels=2))
        assert grid.spec.channels == 4
        assert grid.coords.tolist() == [[0, 0, 0], [1, 0, 0]]
        torch.testing.assert_close(grid.features[0], torch.tensor([2.0, 4.0, 1.0, 4.0]))
        torch.testing.assert_close(grid.features[1], torch.tensor([5.0, 5.0, 0.0, 0.0]))

    def test_permutation_invariant(self):
        rng = torch.Generator().manual_seed(0)
        volumes = [
            _volume([[0, 0, 0], [0, 1, 0], [2, 2, 2]], torch.rand(3, 3, generator=rng).tolist(), i) for i in range(4)
        ]
        forward = aggregate_mean_var(volumes, GridSpec(channels=3))
        backward = aggregate_mean_var(volumes[::-1], GridSpec(channels=3))
        assert torch.equal(forward.features, backward.features)

    def test_identical_observations_have_zero_variance(self):
        row = [[0.1, 0.7, 1e6 + 0.3]]
        grid = aggregate_mean_var([_volume([[0, 0, 0]], row, i) for i in range(5)], GridSpec(channels=3))
        assert grid.features[0, 3:].tolist() == [0.0, 0.0, 0.0]

    def test_needs_a_view(self):
        with pytest.raises(ValueError):
            aggregate_mean_var([], GridSpec())


class TestLocalRegression:
    def test_keeps_the_active_set(self, tiny_params, tiny_arch):
        coords = torch.tensor([[0, 0, 0], [0, 0, 1], [3, 2, 1]])
        aggregated = SparseVoxelGrid(GridSpec(channels=tiny_arch.aggregated_channels), coords, torch.rand(3, tiny_arch.aggregated_channels))
        local = reconstruct_local_volume(aggregated, tiny_params, tiny_arch)
        assert torch.equal(local.coords, aggregated.coords)
        assert local.features.shape == (3, tiny_arch.volume_channels)

    def test_output_layer_is_linear(self, tiny_params, tiny_arch):
        tiny_params.fill_(0.0, "J.")
        tiny_params.fill_(-0.25, "J.1.bias")
        aggregated = SparseVoxelGrid(GridSpec(channels=tiny_arch.aggregated_channels), torch.tensor([[1, 1, 1]]), torch.rand(1, tiny_arch.aggregated_channels))
        local = reconstruct_local_volume(aggregated, tiny_params, tiny_arch)
        torch.testing.assert_close(local.features, torch.full((1, tiny_arch.volume_channels), -0.25))


class TestReconstructFrame:
    def test_local_volume_covers_neighbor_frustums(self, orbit_views, tiny_params, tiny_arch, tiny_config, orbit_spec):
        local = reconstruct_frame(orbit_views, 1, tiny_params, tiny_arch, tiny_config, orbit_spec)
        assert local.neighbors == (1, 0)
        assert local.grid.spec.channels == tiny_arch.volume_channels
        assert len(local.grid) > 0
        expected = frustum_voxels([orbit_views[1], orbit_views[0]], orbit_spec, tiny_config.max_depth)
        assert set(pack_keys(local.grid.coords).tolist()) <= set(pack_keys(torch.from_numpy(expected)).tolist())

    def test_gradients_reach_every_reconstruction_network(self, orbit_views, tiny_params, tiny_arch, tiny_config, orbit_spec):
        local = reconstruct_frame(orbit_views, 0, tiny_params, tiny_arch, tiny_config, orbit_spec)
        local.grid.features.square().sum().backward()
        for name in ("encoder.0.weight", "G.0.weight", "J.0.weight"):
            assert tiny_params[name].grad is not None

    def test_feature_cache_gives_same_volume(self, orbit_views, tiny_params, tiny_arch, tiny_config, orbit_spec):
        cache = {}
        first = reconstruct_frame(orbit_views, 2, tiny_params, tiny_arch, tiny_config, orbit_spec, feature_cache=cache)
        assert set(cache) == {1, 2}
        again = reconstruct_frame(orbit_views, 2, tiny_params, tiny_arch, tiny_config, orbit_spec, feature_cache=cache)
        assert torch.equal(first.grid.features, again.grid.features)

    def test_bounds_outside_frustum_give_empty_volume(self, orbit_views, tiny_params, tiny_arch, tiny_config, orbit_spec):
        bounds = (np.full(3, 40.0), np.full(3, 41.0))
        local = reconstruct_frame(orbit_views, 0, tiny_params, tiny_arch, tiny_config, orbit_spec, bounds)
        assert len(local.grid) == 0
        assert local.grid.spec.channels == tiny_arch.volume_channels

    def test_neighbors_come_from_key_frames(self, orbit_views, tiny_params, tiny_arch, tiny_config, orbit_spec):
        local = reconstruct_frame(orbit_views, 2, tiny_params, tiny_arch, tiny_config, orbit_spec, key_frames=[0, 2])
        assert local.neighbors == (2, 0)
        with pytest.raises(ValueError):
            reconstruct_frame(orbit_views, 1, tiny_params, tiny_arch, tiny_config, orbit_spec, key_frames=[0, 2])

    def test_stride_two_sequence_skips_odd_frames(self, intrinsics, tiny_params, tiny_arch, tiny_config, orbit_spec):
        views = []
        for i, angle in enumerate(np.linspace(0.0, np.pi / 2, 9)):
            pose = look_at((1.5 * np.cos(angle), 1.5 * np.sin(angle), 1.0), (0.0, 0.0, 0.5))
            views.append(CameraView(np.full((8, 8, 3), 0.5), intrinsics, pose, frame_index=i))
        config = tiny_config.replace(neighbors=3)
        local = reconstruct_frame(views, 2, tiny_params, tiny_arch, config, orbit_spec, key_frames=[0, 2, 4, 6, 8])
        assert local.neighbors == (2, 0, 4)
