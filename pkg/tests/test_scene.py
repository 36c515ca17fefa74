import math

import numpy as np
import pytest

from fieldmerge.geometry import look_at_camera
from fieldmerge.scene import (
    AxisBox,
    Scene,
    Sphere,
    TwoTone,
    covis_surface_samples,
    gen_dataset,
    load_dataset,
    load_image,
    near_far,
    oracle_radiance,
    oracle_render,
    render_rays,
    save_image,
    scene_by_name,
    twotone_scene,
    visible_mask,
)


def empty_scene():
    return Scene(primitives=(), bbox_lo=(-1, -1, -1), bbox_hi=(1, 1, 1),
                 background=(0.3, 0.5, 0.7))


class TestOracleRadiance:
    def test_outside_everything_is_zero_density(self):
        scene = twotone_scene()
        sigma, _ = oracle_radiance(scene, (0.79, 0.79, 0.79))
        assert sigma == 0.0

    def test_inside_single_sphere(self):
        scene = Scene(primitives=(Sphere((0, 0, 0), 0.5, 20.0, (1, 0, 0)),),
                      bbox_lo=(-1, -1, -1), bbox_hi=(1, 1, 1))
        sigma, color = oracle_radiance(scene, (0.1, 0.1, 0.1))
        assert sigma == 20.0
        assert np.array_equal(color, [1, 0, 0])

    def test_overlap_takes_max_density(self):
        weak = Sphere((0, 0, 0), 0.5, 5.0, (1, 0, 0))
        strong = Sphere((0.2, 0, 0), 0.5, 20.0, (0, 1, 0))
        scene = Scene(primitives=(weak, strong),
                      bbox_lo=(-1, -1, -1), bbox_hi=(1, 1, 1))
        sigma, color = oracle_radiance(scene, (0.1, 0.0, 0.0))
        assert sigma == 20.0
        assert np.array_equal(color, [0, 1, 0])

    def test_density_tie_keeps_first_listed(self):
        a = Sphere((0, 0, 0), 0.5, 5.0, (1, 0, 0))
        b = Sphere((0.1, 0, 0), 0.5, 5.0, (0, 1, 0))
        scene = Scene(primitives=(a, b),
                      bbox_lo=(-1, -1, -1), bbox_hi=(1, 1, 1))
        _, color = oracle_radiance(scene, (0.2, 0.0, 0.0))
        assert np.array_equal(color, [1, 0, 0])

    def test_two_tone_splits_by_half_space(self):
        scene = twotone_scene()
        _, pos = oracle_radiance(scene, (0.2, 0.0, 0.0))
        _, neg = oracle_radiance(scene, (-0.2, 0.0, 0.0))
        assert pos[0] > pos[2]
        assert neg[2] > neg[0]
        assert not np.array_equal(pos, neg)

    def test_bbox_must_contain_primitives(self):
        with pytest.raises(ValueError):
            Scene(primitives=(Sphere((0.9, 0, 0), 0.5, 1.0),),
                  bbox_lo=(-1, -1, -1), bbox_hi=(1, 1, 1))


class TestOracleRender:
    def test_empty_scene_is_background(self):
        scene = empty_scene()
        pose = look_at_camera((0, -3, 1), (0, 0, 0), focal=10.0,
                              width=6, height=5)
        img = oracle_render(scene, pose, samples_per_ray=64)
        assert img.shape == (5, 6, 3)
        assert np.allclose(img, scene.background, atol=1e-12)

    def test_slab_transmittance_matches_closed_form(self):
        # Beer-Lambert oracle: black slab of density 0.8 and thickness 2
        # against a white background leaves exactly exp(-1.6) per channel.
        slab = AxisBox(lo=(-5, -5, 0.3), hi=(5, 5, 2.3), density=0.8,
                       color=(0, 0, 0))
        scene = Scene(primitives=(slab,), bbox_lo=(-6, -6, -1),
                      bbox_hi=(6, 6, 4), background=(1, 1, 1))
        origins = np.array([[0.0, 0.0, -0.713]])
        dirs = np.array([[0.0, 0.0, 1.0]])
        out = render_rays(scene, origins, dirs, near=0.1, far=4.1,
                          samples_per_ray=1024)
        assert np.all(np.abs(out - math.exp(-1.6)) < 1e-3)

    def test_opaque_sphere_saturates_to_its_color(self):
        color = (0.2, 0.4, 0.6)
        scene = Scene(primitives=(Sphere((0, 0, 0), 1.0, 500.0, color),),
                      bbox_lo=(-1.2, -1.2, -1.2), bbox_hi=(1.2, 1.2, 1.2))
        focal = 0.5 * 16 / math.tan(math.radians(30))
        pose = look_at_camera((0, -1.5, 0), (0, 0, 0), focal=focal,
                              width=16, height=16)
        img = oracle_render(scene, pose, samples_per_ray=256)
        assert np.all(np.abs(img - np.array(color)) < 1e-3)

    def test_output_in_unit_range_and_weights_valid(self):
        scene = twotone_scene()
        pose = look_at_camera((2.0, 1.0, 1.2), (0, 0, 0), focal=8.0,
                              width=8, height=8)
        near, far = near_far(scene, pose)
        rng = np.random.default_rng(0)
        dirs = rng.normal(size=(40, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        origins = np.broadcast_to(pose.center, dirs.shape).copy()
        out, wsum = render_rays(scene, origins, dirs, near, far, 128,
                                return_weight_sum=True)
        assert out.min() >= 0.0 and out.max() <= 1.0
        assert np.all(wsum >= 0.0) and np.all(wsum <= 1.0 + 1e-12)
        img = oracle_render(scene, pose, samples_per_ray=128)
        assert img.min() >= 0.0 and img.max() <= 1.0

    def test_quadrature_converges_monotonically(self):
        scene = twotone_scene()
        rng = np.random.default_rng(7)
        origins = 2.4 * rng.normal(size=(100, 3))
        origins /= np.linalg.norm(origins, axis=1, keepdims=True) / 2.4
        targets = 0.3 * rng.normal(size=(100, 3))
        dirs = targets - origins
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        levels = [render_rays(scene, origins, dirs, 1.0, 3.9, n)
                  for n in (128, 256, 512)]
        d_coarse = np.abs(levels[1] - levels[0]).max()
        d_fine = np.abs(levels[2] - levels[1]).max()
        assert d_fine <= d_coarse + 1e-12

    def test_rejects_too_few_samples(self):
        scene = empty_scene()
        with pytest.raises(ValueError):
            render_rays(scene, np.zeros((1, 3)), np.array([[0, 0, 1.0]]),
                        0.1, 2.0, 32)


class TestSurfaceSamples:
    def test_sphere_points_on_surface(self):
        scene = Scene(primitives=(Sphere((0.2, -0.1, 0.3), 1.0, 1.0),),
                      bbox_lo=(-2, -2, -2), bbox_hi=(2, 2, 2))
        pts = covis_surface_samples(scene, 1000, seed=0)
        d = np.linalg.norm(pts - np.array([0.2, -0.1, 0.3]), axis=1)
        assert np.all(np.abs(d - 1.0) < 1e-9)

    def test_area_weighting_between_equal_primitives(self):
        a = Sphere((-1.0, 0, 0), 0.5, 1.0)
        b = Sphere((1.0, 0, 0), 0.5, 1.0)
        scene = Scene(primitives=(a, b), bbox_lo=(-2, -2, -2),
                      bbox_hi=(2, 2, 2))
        pts = covis_surface_samples(scene, 1000, seed=1)
        on_a = int(np.sum(pts[:, 0] < 0))
        # Binomial(1000, 1/2): 3 sigma is about 47.
        assert abs(on_a - 500) <= 3 * math.sqrt(1000 * 0.25)

    def test_box_points_on_faces(self):
        box = AxisBox(lo=(-1, -1, -1), hi=(1, 1, 1), density=1.0)
        scene = Scene(primitives=(box,), bbox_lo=(-2, -2, -2),
                      bbox_hi=(2, 2, 2))
        pts = covis_surface_samples(scene, 500, seed=2)
        on_face = np.isclose(np.abs(pts), 1.0).any(axis=1)
        inside = np.all(np.abs(pts) <= 1.0 + 1e-12, axis=1)
        assert np.all(on_face & inside)

    def test_deterministic(self):
        scene = twotone_scene()
        a = covis_surface_samples(scene, 200, seed=5)
        b = covis_surface_samples(scene, 200, seed=5)
        assert np.array_equal(a, b)

    def test_empty_scene_raises(self):
        with pytest.raises(ValueError):
            covis_surface_samples(empty_scene(), 10, seed=0)


class TestVisibility:
    def make_pose(self, center):
        focal = 0.5 * 32 / math.tan(math.radians(30))
        return look_at_camera(center, (0, 0, 0), focal=focal,
                              width=32, height=32)

    def test_front_point_visible_back_point_occluded(self):
        scene = Scene(primitives=(Sphere((0, 0, 0), 0.45, 25.0),),
                      bbox_lo=(-1, -1, -1), bbox_hi=(1, 1, 1))
        pose = self.make_pose((2.0, 0.0, 0.0))
        pts = np.array([
            [0.45, 0.0, 0.0],   # near face, toward the camera
            [-0.45, 0.0, 0.0],  # far face, behind an opaque sphere
            [3.0, 0.0, 0.0],    # behind the camera
        ])
        vis = visible_mask(scene, pose, pts)
        assert vis.tolist() == [True, False, False]

    def test_off_sensor_point_not_visible(self):
        scene = empty_scene()
        pose = self.make_pose((2.0, 0.0, 0.0))
        # Far off the optical axis: outside a 60 degree field of view.
        pts = np.array([[0.0, 2.5, 0.0]])
        assert not visible_mask(scene, pose, pts)[0]


class TestImageFiles:
    def test_roundtrip_within_quantization(self, tmp_path):
        rng = np.random.default_rng(3)
        img = rng.random((9, 7, 3))
        path = tmp_path / "x.png"
        save_image(path, img)
        back = load_image(path)
        assert back.shape == img.shape
        assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12

    def test_missing_file_raises(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_image(tmp_path / "nope.png")


class TestGenDataset:
    def test_small_dataset_layout(self, tmp_path):
        scene = twotone_scene()
        ds = gen_dataset(scene, n_train=4, n_test=3, radius=2.4,
                         resolution=8, seed=0, out=tmp_path / "d",
                         samples_per_ray=64)
        assert len(ds.views["train"]) == 4
        assert len(ds.views["test"]) == 3
        for rel in ds.views["train"].files + ds.views["test"].files:
            assert (tmp_path / "d" / rel).exists()
        img = ds.image("train", 0)
        assert img.shape == (8, 8, 3)
        assert (tmp_path / "d" / "cameras.json").exists()
        assert (tmp_path / "d" / "meta.json").exists()

    def test_same_seed_is_byte_identical(self, tmp_path):
        scene = twotone_scene()
        gen_dataset(scene, 3, 2, 2.4, 8, seed=4, out=tmp_path / "a",
                    samples_per_ray=64)
        gen_dataset(scene, 3, 2, 2.4, 8, seed=4, out=tmp_path / "b",
                    samples_per_ray=64)
        files = sorted(p.relative_to(tmp_path / "a")
                       for p in (tmp_path / "a").rglob("*") if p.is_file())
        assert files
        for rel in files:
            assert (tmp_path / "a" / rel).read_bytes() == \
                (tmp_path / "b" / rel).read_bytes()

    def test_train_and_test_centers_disjoint(self, tmp_path):
        scene = twotone_scene()
        ds = gen_dataset(scene, 6, 6, 2.4, 8, seed=0, out=tmp_path / "d",
                         samples_per_ray=64)
        train = ds.views["train"].centers()
        test = ds.views["test"].centers()
        gaps = np.linalg.norm(train[:, None, :] - test[None, :, :], axis=-1)
        assert gaps.min() > 1e-6

    def test_roundtrip_through_loader(self, tmp_path):
        scene = twotone_scene()
        ds = gen_dataset(scene, 3, 2, 2.4, 8, seed=1, out=tmp_path / "d",
                         samples_per_ray=64)
        back = load_dataset(tmp_path / "d")
        assert back.meta["scene"] == "twotone"
        lo, hi = back.bbox
        assert np.allclose(lo, scene.bbox_lo)
        assert np.allclose(hi, scene.bbox_hi)
        assert np.allclose(back.background, scene.background)
        for split in ("train", "test"):
            got, want = back.views[split], ds.views[split]
            assert got.files == want.files
            for p, q in zip(got.poses, want.poses):
                assert np.allclose(p.center, q.center)

    def test_loader_requires_manifest_files(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_dataset(tmp_path)

    def test_scene_registry(self):
        assert scene_by_name("twotone").name == "twotone"
        with pytest.raises(ValueError):
            scene_by_name("chair")
