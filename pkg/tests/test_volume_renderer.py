"""Tests for ray traversal, sampling, decoding and compositing."""

import math

import numpy as np
import pytest
import torch

from geometry.camera import Ray
from grid.sparse_grid import GridSpec, SparseVoxelGrid, prune
from rendering import (
    RenderSettings,
    composite,
    decode_radiance,
    make_density_probe,
    render_image,
    render_pixel_batch,
    sample_hits,
    sample_ray,
    traverse_rays,
)
from training import loss_local

LN2 = math.log(2.0)


@pytest.fixture
def row_grid(tiny_arch) -> SparseVoxelGrid:
    """Unit voxels at x = 0, 1 and 3 (x = 2 is a gap)."""
    spec = GridSpec(voxel_size=1.0, channels=tiny_arch.volume_channels)
    return SparseVoxelGrid(spec, torch.tensor([[0, 0, 0], [1, 0, 0], [3, 0, 0]]), torch.rand(3, 4))


@pytest.fixture
def flat_decoder(tiny_params):
    """Decoder with every weight and bias zero: sigma = ln 2, color = 0.5 everywhere."""
    tiny_params.fill_(0.0, "R.")
    return tiny_params


class TestComposite:
    def test_half_opacity_samples(self):
        sigma = torch.tensor([LN2, LN2])
        color = torch.tensor([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        out = composite(sigma, color, torch.ones(2), torch.tensor([0.5, 1.5]), (0.0, 0.0, 1.0))
        torch.testing.assert_close(out.color, torch.tensor([0.5, 0.25, 0.25]))
        torch.testing.assert_close(out.opacity, torch.tensor(0.75))
        torch.testing.assert_close(out.transmittance, torch.tensor(0.25))
        torch.testing.assert_close(out.depth, torch.tensor((0.5 * 0.5 + 0.25 * 1.5) / 0.75))

    def test_no_samples_shows_background(self):
        out = composite(torch.zeros(0), torch.zeros(0, 3), torch.zeros(0), torch.zeros(0), (0.2, 0.4, 0.6))
        torch.testing.assert_close(out.color, torch.tensor([0.2, 0.4, 0.6]))
        assert float(out.opacity) == 0.0
        assert float(out.transmittance) == 1.0

    def test_masked_batch_ignores_padding(self):
        sigma = torch.tensor([[LN2, 5.0], [LN2, LN2]])
        color = torch.full((2, 2, 3), 1.0)
        mask = torch.tensor([[True, False], [True, True]])
        t = torch.tensor([[0.5, 0.0], [0.5, 1.5]])
        out = composite(sigma, color, torch.ones(2, 2), t, (0.0, 0.0, 0.0), mask)
        torch.testing.assert_close(out.opacity, torch.tensor([0.5, 0.75]))

    def test_rejects_unordered_samples(self):
        with pytest.raises(ValueError):
            composite(torch.ones(2), torch.zeros(2, 3), torch.ones(2), torch.tensor([1.0, 1.0]), (0, 0, 0))

    def test_matches_front_to_back_loop(self):
        torch.manual_seed(0)
        sigma, color = torch.rand(20, 7) * 3, torch.rand(20, 7, 3)
        delta = torch.rand(20, 7) * 0.5 + 0.01
        t = torch.cumsum(delta, dim=1)
        background = torch.tensor([0.1, 0.2, 0.3])
        out = composite(sigma, color, delta, t, background)
        for r in range(20):
            transmittance, rgb = 1.0, torch.zeros(3)
            for i in range(7):
                alpha = 1.0 - math.exp(-float(sigma[r, i] * delta[r, i]))
                rgb = rgb + transmittance * alpha * color[r, i]
                transmittance *= 1.0 - alpha
            torch.testing.assert_close(out.color[r], rgb + transmittance * background)
            assert float(out.transmittance[r]) == pytest.approx(transmittance, rel=1e-12)

    def test_weights_and_final_transmittance_sum_to_one(self):
        rng = torch.Generator().manual_seed(1)
        sigma = torch.rand(1000, 16, generator=rng) * 5
        delta = torch.rand(1000, 16, generator=rng) * 0.5
        t = torch.cumsum(delta + 1e-3, dim=1)
        out = composite(sigma, torch.rand(1000, 16, 3, generator=rng), delta, t, (0.0, 0.0, 0.0))
        torch.testing.assert_close(out.opacity + out.transmittance, torch.ones(1000), rtol=0, atol=1e-12)

    def test_gradcheck(self):
        torch.manual_seed(2)
        sigma = (torch.rand(3, 4) + 0.1).requires_grad_(True)
        color = torch.rand(3, 4, 3, requires_grad=True)
        delta = torch.full((3, 4), 0.3)
        t = torch.cumsum(delta, dim=1)
        mask = torch.tensor([[True] * 4, [True, True, True, False], [True, False, False, False]])

        def render(sigma, color):
            out = composite(sigma, color, delta, t, (0.2, 0.4, 0.6), mask)
            return out.color, out.depth, out.transmittance

        assert torch.autograd.gradcheck(render, (sigma, color))


class TestTraversal:
    def test_hits_active_voxels_in_order(self, row_grid):
        hits = traverse_rays(np.array([[-1.0, 0.5, 0.5]]), np.array([[1.0, 0.0, 0.0]]), row_grid, 0.0, 100.0)
        assert hits.ray.tolist() == [0, 0, 0]
        assert hits.voxel.tolist() == [0, 1, 2]
        np.testing.assert_allclose(hits.entry, [1.0, 2.0, 4.0])
        np.testing.assert_allclose(hits.exit, [2.0, 3.0, 5.0])

    def test_far_plane_truncates(self, row_grid):
        hits = traverse_rays(np.array([[-1.0, 0.5, 0.5]]), np.array([[1.0, 0.0, 0.0]]), row_grid, 0.0, 2.5)
        assert hits.voxel.tolist() == [0, 1]
        np.testing.assert_allclose(hits.exit, [2.0, 2.5])

    def test_missing_ray_has_no_hits(self, row_grid):
        hits = traverse_rays(np.array([[-1.0, 5.0, 0.5]]), np.array([[1.0, 0.0, 0.0]]), row_grid, 0.0, 100.0)
        assert len(hits) == 0

    def test_empty_grid(self, tiny_arch):
        empty = SparseVoxelGrid.empty(GridSpec(channels=4))
        assert len(traverse_rays(np.zeros((1, 3)), np.array([[0.0, 0.0, 1.0]]), empty, 0.0, 10.0)) == 0

    def test_midpoint_samples(self, row_grid):
        origins, directions = np.array([[-1.0, 0.5, 0.5]]), np.array([[1.0, 0.0, 0.0]])
        hits = traverse_rays(origins, directions, row_grid, 0.0, 100.0)
        samples = sample_hits(hits, origins, directions, 2)
        np.testing.assert_allclose(samples.t, [1.25, 1.75, 2.25, 2.75, 4.25, 4.75])
        np.testing.assert_allclose(samples.delta, 0.5)
        np.testing.assert_allclose(samples.positions[0], [0.25, 0.5, 0.5])

    def test_jittered_samples_stay_in_their_interval(self, row_grid):
        origins, directions = np.array([[-1.0, 0.5, 0.5]]), np.array([[1.0, 0.0, 0.0]])
        hits = traverse_rays(origins, directions, row_grid, 0.0, 100.0)
        samples = sample_hits(hits, origins, directions, 4, np.random.default_rng(0))
        assert np.all(np.diff(samples.t) > 0)
        assert samples.t.min() >= 1.0 and samples.t.max() <= 5.0

    def test_sample_ray(self, row_grid):
        ray = Ray(origin=np.array([-1.0, 0.5, 0.5]), direction=np.array([1.0, 0.0, 0.0]))
        samples = sample_ray(ray, row_grid, 0.0, 100.0, samples_per_voxel=1)
        assert [s.t for s in samples] == [1.5, 2.5, 4.5]
        assert sample_ray(Ray(np.array([0.0, 9.0, 0.0]), ray.direction), row_grid, 0.0, 100.0) == []
        with pytest.raises(ValueError):
            sample_ray(ray, row_grid, 2.0, 1.0)

    def test_sample_ray_matches_exhaustive_box_intersection(self, tiny_arch):
        rng = np.random.default_rng(7)
        occupied = np.argwhere(rng.random((5, 5, 5)) < 0.4)
        spec = GridSpec(voxel_size=0.5, channels=tiny_arch.volume_channels)
        grid = SparseVoxelGrid(spec, torch.from_numpy(occupied), torch.rand(len(occupied), spec.channels))
        lo, hi = occupied * 0.5, occupied * 0.5 + 0.5
        center = np.full(3, 1.25)

        for _ in range(50):
            offset = rng.normal(size=3)
            origin = center + 3.0 * offset / np.linalg.norm(offset)
            target = center + rng.uniform(-1.2, 1.2, 3)
            direction = (target - origin) / np.linalg.norm(target - origin)
            samples = sample_ray(Ray(origin, direction), grid, 0.0, 100.0, samples_per_voxel=1)

            with np.errstate(divide="ignore"):
                t_a, t_b = (lo - origin) / direction, (hi - origin) / direction
            enter = np.maximum(np.minimum(t_a, t_b).max(axis=1), 0.0)
            leave = np.minimum(np.maximum(t_a, t_b).min(axis=1), 100.0)
            crossed = np.nonzero(leave - enter > 1e-9)[0]
            crossed = crossed[np.argsort(enter[crossed])]

            assert len(samples) == len(crossed)
            np.testing.assert_allclose([s.t for s in samples], (enter[crossed] + leave[crossed]) / 2, atol=1e-9)
            np.testing.assert_allclose([s.delta for s in samples], leave[crossed] - enter[crossed], atol=1e-9)


class TestDecoding:
    def test_flat_decoder_outputs(self, row_grid, flat_decoder, tiny_arch):
        out = decode_radiance(row_grid, torch.tensor([[0.5, 0.5, 0.5]]), torch.tensor([[0.0, 0.0, 1.0]]), flat_decoder, tiny_arch)
        torch.testing.assert_close(out.sigma, torch.tensor([LN2]))
        torch.testing.assert_close(out.color, torch.full((1, 3), 0.5))
        assert not bool(out.empty[0])

    def test_density_is_non_negative(self, row_grid, tiny_params, tiny_arch):
        probe = make_density_probe(row_grid, tiny_params, tiny_arch)
        sigma = probe(torch.rand(100, 3) * torch.tensor([4.0, 1.0, 1.0]))
        assert sigma.shape == (100,)
        assert bool((sigma >= 0).all())
        assert not sigma.requires_grad

    def test_rejects_non_unit_directions(self, row_grid, tiny_params, tiny_arch):
        with pytest.raises(ValueError):
            decode_radiance(row_grid, torch.zeros(1, 3), torch.tensor([[0.0, 0.0, 3.0]]), tiny_params, tiny_arch)

    def test_gradcheck_against_features_points_and_decoder(self, row_grid, tiny_params, tiny_arch):
        names = ("R.trunk.0.weight", "R.sigma.0.weight", "R.color.1.weight")
        weights = [tiny_params[n].detach().clone().requires_grad_(True) for n in names]
        features = row_grid.features.clone().requires_grad_(True)
        # off the voxel-center planes, where trilinear weights have kinks
        points = torch.tensor([[0.8, 0.3, 0.7], [1.2, 0.6, 0.4], [3.3, 0.2, 0.8]], requires_grad=True)
        directions = torch.nn.functional.normalize(torch.tensor([[1.0, 0.2, 0.1], [0.0, 1.0, 0.0], [-0.3, 0.4, 0.8]]), dim=-1)

        def decode(features, points, *weights):
            params = tiny_params.substitute(dict(zip(names, weights)))
            out = decode_radiance(row_grid.with_features(features), points, directions, params, tiny_arch)
            return out.sigma, out.color

        assert torch.autograd.gradcheck(decode, (features, points, *weights))


class TestRendering:
    def test_one_voxel_of_ln2_density_is_half_opaque(self, tiny_arch, flat_decoder):
        grid = SparseVoxelGrid(GridSpec(voxel_size=1.0, channels=4), torch.tensor([[0, 0, 0]]), torch.rand(1, 4))
        settings = RenderSettings(near=0.0, far=10.0, samples_per_voxel=4)
        out = render_pixel_batch(
            np.array([[-1.0, 0.5, 0.5]]), np.array([[1.0, 0.0, 0.0]]), grid, flat_decoder, tiny_arch, settings
        )
        torch.testing.assert_close(out.opacity, torch.tensor([0.5]))
        torch.testing.assert_close(out.color, torch.full((1, 3), 0.25))
        # weights decay along the voxel, so the expected depth sits before its midpoint
        assert 1.0 < float(out.depth[0]) < 1.5

    def test_gradient_reaches_grid_and_decoder(self, row_grid, tiny_params, tiny_arch):
        features = row_grid.features.clone().requires_grad_(True)
        grid = row_grid.with_features(features)
        out = render_pixel_batch(
            np.array([[-1.0, 0.5, 0.5]]),
            np.array([[1.0, 0.0, 0.0]]),
            grid,
            tiny_params,
            tiny_arch,
            RenderSettings(far=10.0, samples_per_voxel=2),
        )
        out.color.sum().backward()
        assert features.grad is not None and bool(features.grad.abs().sum() > 0)
        assert tiny_params["R.sigma.0.weight"].grad is not None

    def test_render_loss_gradcheck(self, row_grid, tiny_params, tiny_arch):
        names = ("R.trunk.0.bias", "R.sigma.0.weight", "R.color.0.weight")
        weights = [tiny_params[n].detach().clone().requires_grad_(True) for n in names]
        features = row_grid.features.clone().requires_grad_(True)
        origins = np.array([[-1.0, 0.5, 0.5], [-1.0, 0.3, 0.6], [-1.0, 0.7, 0.2]])
        directions = np.array([[1.0, 0.0, 0.0], [0.96, 0.0, 0.28], [1.0, 0.0, 0.0]])
        settings = RenderSettings(far=10.0, samples_per_voxel=3)
        target = torch.rand(3, 3)

        def loss(features, *weights):
            params = tiny_params.substitute(dict(zip(names, weights)))
            out = render_pixel_batch(origins, directions, row_grid.with_features(features), params, tiny_arch, settings)
            return loss_local(out.color, target)

        assert torch.autograd.gradcheck(loss, (features, *weights))

    def test_pruning_transparent_voxels_keeps_the_image(self, tiny_params, tiny_arch):
        # sigma = softplus(200 * relu(f_0) - 40): ~4e-18 where the first channel is zero
        tiny_params.fill_(0.0, "R.")
        trunk = torch.zeros_like(tiny_params["R.trunk.0.weight"])
        trunk[0, 0] = 1.0
        tiny_params.assign("R.trunk.0.weight", trunk)
        sigma = torch.zeros_like(tiny_params["R.sigma.0.weight"])
        sigma[0, 0] = 200.0
        tiny_params.assign("R.sigma.0.weight", sigma)
        tiny_params.fill_(-40.0, "R.sigma.0.bias")
        tiny_params.assign("R.color.1.bias", torch.tensor([0.3, -0.2, 0.9]))

        coords = torch.tensor([[0, 0, 0], [1, 0, 0], [4, 0, 0], [5, 0, 0], [4, 1, 0]])
        features = torch.zeros(5, 4)
        features[:2, 0] = 1.0
        grid = SparseVoxelGrid(GridSpec(voxel_size=1.0, channels=4), coords, features)

        result = prune(grid, make_density_probe(grid, tiny_params, tiny_arch), gamma=0.6, samples_per_axis=2)
        assert result.removed.tolist() == [[4, 0, 0], [4, 1, 0], [5, 0, 0]]

        rng = np.random.default_rng(3)
        origins = np.column_stack([np.full(16, -1.0), rng.uniform(0.05, 1.95, 16), rng.uniform(0.05, 0.95, 16)])
        directions = np.tile([1.0, 0.0, 0.0], (16, 1))
        settings = RenderSettings(far=20.0, samples_per_voxel=4, background=(0.2, 0.4, 0.6))
        with torch.no_grad():
            before = render_pixel_batch(origins, directions, grid, tiny_params, tiny_arch, settings)
            after = render_pixel_batch(origins, directions, result.grid, tiny_params, tiny_arch, settings)
        torch.testing.assert_close(after.color, before.color, rtol=0, atol=1e-6)
        torch.testing.assert_close(after.opacity, before.opacity, rtol=0, atol=1e-6)

    def test_render_image_marks_misses(self, identity_view, tiny_arch, flat_decoder):
        grid = SparseVoxelGrid(
            GridSpec(origin=(0.0, 0.0, 1.0), voxel_size=0.5, channels=4), torch.tensor([[0, 0, 0]]), torch.rand(1, 4)
        )
        settings = RenderSettings(near=0.1, far=5.0, samples_per_voxel=2, background=(0.2, 0.4, 0.6), chunk=10)
        image, depth = render_image(identity_view, grid, flat_decoder, tiny_arch, settings)
        assert image.shape == (8, 8, 3) and depth.shape == (8, 8)
        # top-left rays point to -x, -y and never reach the voxel
        assert np.isnan(depth[0, 0])
        np.testing.assert_allclose(image[0, 0], [0.2, 0.4, 0.6])
        assert np.isfinite(depth[7, 7]) and 1.0 <= depth[7, 7] <= 2.0

    def test_settings_validate_interval(self):
        with pytest.raises(ValueError):
            RenderSettings(near=2.0, far=1.0)
