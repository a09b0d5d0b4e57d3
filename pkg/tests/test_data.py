import numpy as np
import pytest

from symslice.data import (
    FAMILIES,
    ManifestEntry,
    ShapeRecipe,
    Viewpoint,
    default_manifest,
    gen_shape,
    gen_vehicle,
    partial_view,
    random_rotation,
    read_manifest,
    save_cloud_xyz,
    write_manifest,
)
from symslice.errors import EmptyResult
from symslice.geometry import reflect_point
from symslice.grid import normalize_cloud
from symslice.kdtree import KdIndex
from symslice.metrics import sde


class TestGenShape:
    @pytest.mark.parametrize("family", FAMILIES)
    def test_noiseless_exact_mirror(self, family):
        cloud, gt = gen_shape(ShapeRecipe(family, point_count=512, noise_sigma=0.0, seed=3))
        idx = KdIndex(cloud.points)
        for plane in gt.planes:
            mirrored = reflect_point(cloud.points, plane)
            nn = idx.nearest(mirrored)
            dist = np.linalg.norm(cloud.points[nn] - mirrored, axis=1)
            assert np.max(dist) < 1e-12

    @pytest.mark.parametrize("family", FAMILIES)
    def test_noiseless_sde_zero(self, family):
        cloud, gt = gen_shape(ShapeRecipe(family, point_count=512, noise_sigma=0.0, seed=5))
        for plane in gt.planes:
            assert sde(plane, gt, samples=500, seed=0) == pytest.approx(0.0, abs=1e-12)

    def test_seed_determinism(self):
        r = ShapeRecipe("mirrored_blob", point_count=256, noise_sigma=0.005, seed=9)
        a, _ = gen_shape(r)
        b, _ = gen_shape(r)
        assert np.array_equal(a.points, b.points)

    def test_bi_symmetric_two_planes_near_noise_floor(self):
        sigma = 0.005
        cloud, gt = gen_shape(ShapeRecipe("bi_symmetric", point_count=2048, noise_sigma=sigma, seed=1))
        assert len(gt.planes) == 2
        # both endpoints of a mirror pair carry independent noise, so the
        # floor is 2 * 3 * sigma^2 (minus a small nearest-neighbor gain)
        for plane in gt.planes:
            assert sde(plane, gt, samples=1000, seed=0) < 6 * sigma**2

    def test_point_count_honored(self):
        cloud, _ = gen_shape(ShapeRecipe("box_union", point_count=300, noise_sigma=0.0, seed=2))
        assert len(cloud) == 300


class TestGenVehicle:
    def test_symmetric_about_z0(self):
        cloud, gt, size = gen_vehicle(seed=4, point_count=1024, noise_sigma=0.0)
        assert len(gt.planes) == 1
        assert np.allclose(np.abs(gt.planes[0].n), [0, 0, 1])
        assert sde(gt.planes[0], gt, samples=500, seed=0) == pytest.approx(0.0, abs=1e-12)

    def test_size_encloses_points(self):
        cloud, _, (l, w, h) = gen_vehicle(seed=6, point_count=1024, noise_sigma=0.0)
        assert np.all(np.abs(cloud.points[:, 0]) <= l / 2 + 1e-9)
        assert np.all(np.abs(cloud.points[:, 2]) <= w / 2 + 1e-9)


class TestRandomRotation:
    def test_orthonormal(self):
        r = random_rotation(0)
        assert np.max(np.abs(r.matrix.T @ r.matrix - np.eye(3))) < 1e-12
        assert np.linalg.det(r.matrix) == pytest.approx(1.0)

    def test_seed_determinism(self):
        assert np.array_equal(random_rotation(5).matrix, random_rotation(5).matrix)

    def test_mean_rotation_angle_uniform_so3(self):
        # uniform SO(3) has mean geodesic angle 126.47 degrees
        angles = []
        for seed in range(10_000):
            m = random_rotation(seed).matrix
            angles.append(np.degrees(np.arccos(np.clip((np.trace(m) - 1) / 2, -1, 1))))
        assert np.mean(angles) == pytest.approx(126.47, abs=1.0)


class TestPartialView:
    def sphere_cloud(self, n=4000, seed=0):
        rng = np.random.default_rng(seed)
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        from symslice.geometry import Cloud

        return Cloud(v * 0.475)

    def test_occlusion_keeps_nearer_point(self):
        from symslice.geometry import Cloud

        c = Cloud(np.array([[0.2, 0.0, 0.0], [-0.2, 0.0, 0.0]]))
        v = Viewpoint(eye=np.array([2.0, 0.0, 0.0]), image_size=16)
        kept = partial_view(c, v)
        assert len(kept) == 1
        assert kept.points[0, 0] == pytest.approx(0.2)

    def test_back_face_culled(self):
        # dense enough that every silhouette pixel holds a front point
        c = self.sphere_cloud(n=200_000)
        v = Viewpoint(eye=np.array([2.0, 0.0, 0.0]), image_size=64)
        kept = partial_view(c, v)
        assert np.min(kept.points[:, 0]) > -0.2
        # analytic visible-cap boundary for radius 0.475 seen from x=2
        assert np.min(kept.points[:, 0]) > 0.475**2 / 2 - 0.02

    def test_visible_fraction_approaches_half(self):
        # density matched to the buffer: ~2 points per silhouette pixel,
        # occluded half culled, visible half kept one-per-pixel
        c = self.sphere_cloud(n=4000, seed=1)
        v = Viewpoint(eye=np.array([2.0, 0.0, 0.0]), image_size=64)
        kept = partial_view(c, v)
        assert len(kept) / len(c) == pytest.approx(0.5, abs=0.1)

    def test_subset_of_input(self):
        c = self.sphere_cloud(n=500, seed=2)
        kept = partial_view(c, Viewpoint(eye=np.array([0.0, 0.0, 2.0]), image_size=32))
        assert kept.kind == "partial"
        src = {tuple(p) for p in c.points}
        assert all(tuple(p) in src for p in kept.points)

    def test_empty_result(self):
        from symslice.geometry import Cloud

        c = Cloud(np.array([[0.0, 0.0, 3.0]]))
        # every point behind the eye
        with pytest.raises(EmptyResult):
            partial_view(c, Viewpoint(eye=np.array([0.0, 0.0, 2.0]), image_size=16))


class TestXyzRoundTrip:
    def test_full_precision(self, tmp_path):
        from symslice.data import load_cloud
        from symslice.geometry import Cloud

        rng = np.random.default_rng(3)
        c = Cloud(rng.normal(size=(64, 3)) / 3.0)
        path = tmp_path / "cloud.xyz"
        save_cloud_xyz(c, path)
        back = load_cloud(path)
        assert np.array_equal(back.points, c.points)


class TestManifest:
    def test_round_trip(self, tmp_path):
        entries = default_manifest(seed=0, n_train=8, n_val=4, n_test=4)
        path = tmp_path / "manifest.csv"
        write_manifest(entries, path)
        assert read_manifest(path) == entries

    def test_split_counts_and_families(self):
        entries = default_manifest(seed=0, n_train=8, n_val=4, n_test=4)
        assert sum(e.split == "train" for e in entries) == 8
        assert sum(e.split == "val" for e in entries) == 4
        assert {e.family for e in entries} == set(FAMILIES)

    def test_unique_ids_and_seeds(self):
        entries = default_manifest(seed=1, n_train=50, n_val=10, n_test=10)
        assert len({e.id for e in entries}) == len(entries)
        assert len({e.seed for e in entries}) == len(entries)
