import csv

import numpy as np
import pytest

import symslice.autograd as ag
from symslice.geometry import Plane, reflect_point
from symslice.kdtree import KdIndex, brute_force_nearest
from symslice.metrics import (
    GroundTruth,
    MetricRow,
    angular_error,
    gte,
    gte_loss,
    offsets_loss,
    sde,
    sde_brute,
    write_metric_report,
)


def plane(n, d):
    return Plane(np.asarray(n, dtype=float), d)


def gt_with(points, planes):
    return GroundTruth(planes=planes, object_points=np.asarray(points, dtype=float))


class TestOffsetsLoss:
    def test_zero_when_equal(self):
        t = ag.Tensor(np.random.default_rng(0).normal(size=(2, 3, 4)))
        assert offsets_loss(t, ag.Tensor(t.data.copy())).item() == 0.0

    def test_constant_shift(self):
        rng = np.random.default_rng(1)
        t = rng.normal(size=(3, 5))
        a, b = ag.Tensor(t + 0.7), ag.Tensor(t)
        assert offsets_loss(a, b).item() == pytest.approx(0.7)

    def test_matches_brute_recompute(self):
        rng = np.random.default_rng(2)
        a, b = rng.normal(size=(4, 6)), rng.normal(size=(4, 6))
        got = offsets_loss(ag.Tensor(a), ag.Tensor(b)).item()
        assert got == pytest.approx(np.mean(np.abs(a - b)), abs=1e-12)


class TestGte:
    def test_exact_match_is_zero(self):
        s = plane([0, 1, 0], 0.25)
        gt = gt_with([[0, 0, 0]], [s])
        assert gte(s, gt) == pytest.approx(0.0, abs=1e-15)

    def test_sign_flip_is_zero(self):
        s = plane([0, 1, 0], 0.25)
        gt = gt_with([[0, 0, 0]], [s])
        assert gte(Plane(-s.n, -s.d), gt) == pytest.approx(0.0, abs=1e-15)

    def test_orthogonal_unit_4_vectors(self):
        # pred (1,0,0,0) vs gt (0,1,0,0): sum of squares 2, sign flip no better
        pred = plane([1, 0, 0], 0.0)
        gt = gt_with([[0, 0, 0]], [plane([0, 1, 0], 0.0)])
        assert gte(pred, gt) == pytest.approx(2.0)

    def test_range_and_sign_invariance(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            n1, n2 = rng.normal(size=3), rng.normal(size=3)
            p1 = plane(n1, rng.uniform(-0.5, 0.5))
            p2 = plane(n2, rng.uniform(-0.5, 0.5))
            gt = gt_with([[0, 0, 0]], [p2])
            v = gte(p1, gt)
            assert 0.0 <= v <= 4.0
            assert gte(Plane(-p1.n, -p1.d), gt) == pytest.approx(v, abs=1e-12)

    def test_min_over_planes(self):
        pa, pb = plane([1, 0, 0], 0.0), plane([0, 0, 1], 0.0)
        gt = gt_with([[0, 0, 0]], [pa, pb])
        near_b = plane([0.05, 0, 1], 0.0)
        both = gte(near_b, gt)
        only_b = gte(near_b, gt_with([[0, 0, 0]], [pb]))
        only_a = gte(near_b, gt_with([[0, 0, 0]], [pa]))
        assert both == pytest.approx(only_b)
        assert both <= only_a

    def test_gte_loss_matches_and_differentiates(self):
        rng = np.random.default_rng(4)
        gt = gt_with([[0, 0, 0]], [plane([1, 0.2, 0], 0.1)])
        raw = rng.normal(size=4)
        beta = ag.Tensor(raw / np.linalg.norm(raw), requires_grad=True)
        loss = gte_loss(beta, gt)
        assert loss.item() == pytest.approx(gte(beta.data, gt), abs=1e-12)
        loss.backward()
        assert np.all(np.isfinite(beta.grad))


class TestSde:
    def test_symmetric_cloud_zero(self):
        rng = np.random.default_rng(5)
        half = rng.uniform(0.05, 0.5, size=(100, 3))
        pts = np.vstack([half, half * [-1, 1, 1]])
        s = plane([1, 0, 0], 0.0)
        assert sde(s, gt_with(pts, [s]), samples=1000, seed=0) == pytest.approx(0.0, abs=1e-12)

    def test_single_point_hand_case(self):
        gt = gt_with([[1.0, 0, 0]], [plane([1, 0, 0], 0.0)])
        assert sde(plane([1, 0, 0], 0.0), gt, samples=10, seed=0) == pytest.approx(4.0)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(6)
        pts = rng.normal(size=(300, 3))
        gt = gt_with(pts, [plane([1, 0, 0], 0.0)])
        s = plane(rng.normal(size=3), 0.1)
        assert sde(s, gt, samples=200, seed=7) == pytest.approx(
            sde_brute(s, gt, samples=200, seed=7), abs=1e-12
        )

    def test_seeded_determinism(self):
        rng = np.random.default_rng(8)
        pts = rng.normal(size=(50, 3))
        gt = gt_with(pts, [plane([0, 1, 0], 0.0)])
        s = plane([1, 1, 0], 0.05)
        assert sde(s, gt, 1000, seed=3) == sde(s, gt, 1000, seed=3)

    def test_monotone_toward_symmetry_plane(self):
        rng = np.random.default_rng(9)
        half = rng.uniform(0.05, 0.45, size=(400, 3)) - [0, 0.225, 0.225]
        pts = np.vstack([half, half * [-1, 1, 1]])
        gt = gt_with(pts, [plane([1, 0, 0], 0.0)])
        angles = np.deg2rad([40.0, 20.0, 10.0, 5.0, 0.0])
        vals = [
            sde(plane([np.cos(a), np.sin(a), 0], 0.0), gt, 500, seed=1) for a in angles
        ]
        assert all(v1 >= v2 - 1e-12 for v1, v2 in zip(vals, vals[1:]))

    def test_with_replacement_when_small(self):
        gt = gt_with([[0.3, 0, 0], [-0.3, 0, 0]], [plane([1, 0, 0], 0.0)])
        # |O| = 2 < samples: draws with replacement, still finite and exact here
        assert sde(plane([1, 0, 0], 0.0), gt, samples=64, seed=0) == pytest.approx(0.0, abs=1e-12)


class TestAngularError:
    def test_identical(self):
        s = plane([0.3, 0.4, 0.5], 0.1)
        # arccos near 1.0 loses half the precision; 1e-5 degrees is still exact-for-purpose
        assert angular_error(s, gt_with([[0, 0, 0]], [s])) == pytest.approx(0.0, abs=1e-5)

    def test_orthogonal(self):
        gt = gt_with([[0, 0, 0]], [plane([0, 0, 1], 0.0)])
        assert angular_error(plane([1, 0, 0], 0.0), gt) == pytest.approx(90.0)

    def test_45_degrees(self):
        gt = gt_with([[0, 0, 0]], [plane([1, 0, 0], 0.0)])
        assert angular_error(plane([1, 1, 0], 0.0), gt) == pytest.approx(45.0)

    def test_min_over_planes(self):
        gt = gt_with([[0, 0, 0]], [plane([1, 0, 0], 0.0), plane([0, 0, 1], 0.0)])
        assert angular_error(plane([0.1, 0, 1], 0.0), gt) < 10.0


class TestKdIndex:
    def test_matches_brute_force_exact(self):
        rng = np.random.default_rng(10)
        pts = rng.normal(size=(500, 3))
        idx = KdIndex(pts)
        queries = rng.normal(size=(1000, 3))
        assert np.array_equal(idx.nearest(queries), brute_force_nearest(pts, queries))

    def test_tie_breaks_toward_smallest_index(self):
        pts = np.array([[1.0, 0, 0], [-1.0, 0, 0], [1.0, 0, 0]])
        idx = KdIndex(pts)
        assert idx.nearest(np.array([1.0, 0.0, 0.0])) == 0

    def test_duplicate_heavy_cloud(self):
        rng = np.random.default_rng(11)
        pts = rng.integers(0, 3, size=(200, 3)).astype(float)
        idx = KdIndex(pts)
        queries = rng.normal(size=(200, 3)) * 2
        assert np.array_equal(idx.nearest(queries), brute_force_nearest(pts, queries))


class TestMetricReport:
    def test_csv_format(self, tmp_path):
        rows = [
            MetricRow("obj0", 0.1, 0.002, 3.5, 0.9),
            MetricRow("obj1", float("nan"), float("nan"), float("nan"), 0.0, "EigengapTooSmall"),
        ]
        path = tmp_path / "report.csv"
        write_metric_report(rows, path)
        with open(path, newline="") as f:
            got = list(csv.reader(f))
        assert got[0] == ["object_id", "gte", "sde", "angular_error_deg", "eigengap", "status"]
        assert got[1][0] == "obj0" and got[1][5] == "ok"
        assert float(got[1][1]) == 0.1
        assert got[2][5] == "EigengapTooSmall"
