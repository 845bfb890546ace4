"""Tests for quality metrics, image I/O, manifests and synthetic scenes."""

import json

import numpy as np
import pytest

from geometry.camera import InvalidPoseError, pixel_rays
from scene import (
    ImageDimensionError,
    ManifestError,
    SceneDataset,
    SceneFileNotFoundError,
    depth_metrics,
    export_scene,
    generate_synthetic,
    load_scene,
    preset,
    psnr,
    quantize,
    read_png,
    ssim,
    write_png,
)


@pytest.fixture
def exported(tiny_scene, tmp_path):
    return export_scene(tiny_scene, tmp_path / "scene")


def _edit_manifest(path, edit):
    data = json.loads(path.read_text())
    edit(data)
    path.write_text(json.dumps(data))


class TestQuality:
    def test_psnr_of_constant_offset(self):
        a = np.full((4, 4, 3), 0.5)
        assert psnr(a, a + 0.1) == pytest.approx(20.0)

    def test_psnr_identical_is_infinite(self):
        a = np.random.default_rng(0).random((4, 4, 3))
        assert psnr(a, a) == float("inf")

    def test_psnr_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))

    def test_ssim_identical_is_one(self):
        a = np.random.default_rng(1).random((16, 16, 3))
        assert ssim(a, a) == pytest.approx(1.0)

    def test_ssim_drops_with_noise(self):
        rng = np.random.default_rng(2)
        a = rng.random((16, 16, 3))
        b = np.clip(a + rng.normal(0, 0.2, a.shape), 0, 1)
        assert ssim(a, b) < 0.9

    def test_ssim_single_window_matches_formula(self):
        a = (np.arange(121).reshape(11, 11) % 7) / 6.0
        b = np.clip(0.8 * a + 0.1 + 0.05 * np.eye(11), 0.0, 1.0)
        x = np.arange(11) - 5.0
        g = np.exp(-(x**2) / (2 * 1.5**2))
        w = np.outer(g, g) / g.sum() ** 2
        mu_a, mu_b = (w * a).sum(), (w * b).sum()
        var_a = (w * a * a).sum() - mu_a**2
        var_b = (w * b * b).sum() - mu_b**2
        cov = (w * a * b).sum() - mu_a * mu_b
        c1, c2 = 0.01**2, 0.03**2
        expected = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
        assert ssim(a, b) == pytest.approx(expected, rel=1e-9)

    def test_ssim_needs_a_full_window(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))

    def test_depth_metrics_skip_invalid_pixels(self):
        predicted = np.array([1.0, 2.0, np.nan, 4.0])
        oracle = np.array([1.005, 2.1, 3.0, np.nan])
        metrics = depth_metrics(predicted, oracle, threshold=0.008)
        assert metrics.valid == 2
        assert metrics.abs_err == pytest.approx(0.0525)
        assert metrics.accuracy == 0.5

    def test_depth_metrics_mask_and_empty(self):
        predicted, oracle = np.array([1.0, 2.0]), np.array([1.0, 3.0])
        assert depth_metrics(predicted, oracle, 0.01, mask=np.array([True, False])).accuracy == 1.0
        with pytest.raises(ValueError):
            depth_metrics(predicted, oracle, 0.01, mask=np.array([False, False]))


class TestImageIO:
    def test_quantized_images_survive_png(self, tmp_path):
        image = quantize(np.random.default_rng(3).random((5, 7, 3)))
        path = write_png(tmp_path / "nested" / "a.png", image)
        np.testing.assert_array_equal(read_png(path), image)


class TestManifest:
    def test_export_then_load(self, tiny_scene, exported):
        loaded = load_scene(exported)
        assert loaded.name == tiny_scene.name
        assert loaded.train == tiny_scene.train and loaded.heldout == tiny_scene.heldout
        assert (loaded.near, loaded.far) == (tiny_scene.near, tiny_scene.far)
        np.testing.assert_allclose(loaded.bounds[0], tiny_scene.bounds[0])
        for original, view in zip(tiny_scene.views, loaded.views):
            np.testing.assert_array_equal(view.image, original.image)
            np.testing.assert_allclose(view.pose.matrix(), original.pose.matrix(), atol=1e-12)
            assert view.intrinsics == original.intrinsics
        np.testing.assert_array_equal(loaded.depth_for(1), tiny_scene.depth_for(1))

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(SceneFileNotFoundError):
            load_scene(tmp_path / "nowhere" / "manifest.json")

    def test_missing_image_is_a_file_error(self, exported):
        (exported.parent / "images" / "0001.png").unlink()
        with pytest.raises(FileNotFoundError, match="frame 1"):
            load_scene(exported)

    def test_non_rigid_pose_names_the_frame(self, exported):
        def scale_pose(data):
            data["frames"][3]["pose"][0] *= 1.5

        _edit_manifest(exported, scale_pose)
        with pytest.raises(InvalidPoseError, match="frame 3"):
            load_scene(exported)

    def test_image_size_must_match_intrinsics(self, exported):
        def shrink(data):
            data["frames"][0]["intrinsics"]["width"] = 12

        _edit_manifest(exported, shrink)
        with pytest.raises(ImageDimensionError):
            load_scene(exported)

    @pytest.mark.parametrize(
        "edit",
        [
            lambda d: d.update(schema="other/1"),
            lambda d: d.pop("near"),
            lambda d: d.update(far=0.0),
            lambda d: d["split"].update(heldout=[0]),
            lambda d: d["split"].update(train=[99]),
        ],
        ids=["schema", "missing-near", "far-before-near", "overlapping-split", "unknown-frame"],
    )
    def test_malformed_manifests(self, exported, edit):
        _edit_manifest(exported, edit)
        with pytest.raises(ManifestError):
            load_scene(exported)

    def test_key_frames_use_a_uniform_stride(self, tiny_scene):
        assert tiny_scene.key_frames() == [0, 1, 2, 3]
        assert tiny_scene.key_frames(2) == [0, 2]

    def test_dataset_requires_training_frames(self, tiny_scene):
        with pytest.raises(ManifestError):
            SceneDataset("x", tiny_scene.views, 0.1, 5.0, tiny_scene.bounds, train=[])


class TestSynthetic:
    def test_split_holds_out_every_fourth_frame(self, tiny_scene):
        assert tiny_scene.train == [0, 1, 3, 4]
        assert tiny_scene.heldout == [2]
        assert tiny_scene.views[0].image.shape == (16, 16, 3)

    def test_same_seed_same_scene(self):
        a = generate_synthetic("sphere_object", resolution=12, n_frames=3, seed=4)
        b = generate_synthetic("sphere_object", resolution=12, n_frames=3, seed=4)
        for va, vb in zip(a.views, b.views):
            np.testing.assert_array_equal(va.image, vb.image)

    def test_depth_lands_inside_the_room(self, tiny_scene):
        lo, hi = tiny_scene.bounds
        for position, view in enumerate(tiny_scene.views):
            depth = tiny_scene.depth_for(position).reshape(-1)
            assert np.isfinite(depth).all()  # closed room: every ray hits something
            origins, directions = pixel_rays(view)
            points = origins + depth[:, None] * directions
            assert np.all(points >= lo - 1e-9) and np.all(points <= hi + 1e-9)

    def test_sphere_object_misses_show_background(self):
        dataset = generate_synthetic("sphere_object", resolution=16, n_frames=1)
        depth = dataset.depth_for(0)
        miss = np.isnan(depth)
        assert miss.any() and (~miss).any()
        np.testing.assert_allclose(dataset.views[0].image[miss], np.broadcast_to(dataset.background, (int(miss.sum()), 3)))

    def test_unknown_preset(self):
        with pytest.raises(ValueError):
            preset("castle")
