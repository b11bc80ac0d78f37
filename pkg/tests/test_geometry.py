import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from shapecomp import geometry as G
from shapecomp.geometry import CameraIntrinsics, PointCloud

coords = st.floats(-10, 10, allow_nan=False)


def cloud(pts, frame="camera"):
    return PointCloud(np.asarray(pts, dtype=float), frame=frame)


class TestPointCloud:
    def test_rejects_non_finite(self):
        with pytest.raises(ValueError, match="finite"):
            cloud([[0, 0, np.nan]])

    def test_rejects_bad_shape(self):
        with pytest.raises(ValueError):
            cloud([[0, 0]])

    def test_rejects_unknown_frame(self):
        with pytest.raises(ValueError):
            cloud([[0, 0, 0]], frame="world")

    def test_points_read_only(self):
        c = cloud([[0, 0, 0]])
        with pytest.raises(ValueError):
            c.points[0, 0] = 1.0


class TestFarthestPointSample:
    def test_one_dimensional_example(self):
        pts = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0], [10, 0, 0]], float)
        out = G.farthest_point_sample(cloud(pts), 3).points[:, 0]
        assert out.tolist() == [0.0, 10.0, 3.0]

    def test_k_equals_n_is_permutation(self):
        pts = np.random.default_rng(0).normal(size=(20, 3))
        out = G.farthest_point_sample(cloud(pts), 20).points
        assert sorted(map(tuple, out)) == sorted(map(tuple, pts))

    def test_replication_is_cyclic(self):
        pts = np.arange(9.0).reshape(3, 3)
        out = G.farthest_point_sample(cloud(pts), 7).points
        np.testing.assert_array_equal(out, pts[[0, 1, 2, 0, 1, 2, 0]])

    def test_deterministic(self):
        pts = np.random.default_rng(1).normal(size=(50, 3))
        a = G.farthest_point_sample(cloud(pts), 10).points
        b = G.farthest_point_sample(cloud(pts), 10).points
        assert np.array_equal(a, b)

    def test_covering_radius(self):
        pts = np.random.default_rng(2).normal(size=(200, 3))
        k = 15
        idx = G.fps_indices(pts, k + 1)
        sel = pts[idx[:k]]
        gap = np.linalg.norm(sel - pts[idx[k]], axis=1).min()
        d = np.linalg.norm(pts[:, None] - sel[None], axis=-1).min(axis=1)
        assert d.max() <= gap + 1e-12

    def test_greedy_optimal_each_step(self):
        # brute force: every step picks a point maximising the distance to the selected set
        rng = np.random.default_rng(3)
        for _ in range(20):
            n = rng.integers(3, 9)
            pts = rng.normal(size=(n, 3))
            idx = G.fps_indices(pts, n)
            for i in range(1, n):
                chosen = pts[idx[:i]]
                d = np.linalg.norm(pts[:, None] - chosen[None], axis=-1).min(axis=1)
                assert d[idx[i]] == d.max()

    def test_min_pairwise_distance_beats_other_continuations(self):
        def min_pair(s):
            return min(np.linalg.norm(x - y) for x, y in itertools.combinations(s, 2))

        rng = np.random.default_rng(4)
        for _ in range(20):
            n = int(rng.integers(3, 9))
            pts = rng.normal(size=(n, 3))
            idx = list(G.fps_indices(pts, n))
            for i in range(1, n):
                prefix = idx[:i]
                ours = min_pair(pts[prefix + [idx[i]]])
                for alt in set(range(n)) - set(prefix):
                    assert ours >= min_pair(pts[prefix + [alt]]) - 1e-12

    def test_errors(self):
        with pytest.raises(G.EmptyCloudError):
            G.farthest_point_sample(cloud(np.zeros((0, 3))), 3)
        with pytest.raises(ValueError):
            G.farthest_point_sample(cloud([[0, 0, 0]]), 0)


class TestBackproject:
    def test_principal_point(self):
        intr = CameraIntrinsics(fx=100, fy=100, cx=2, cy=1, depth_scale=0.001)
        depth = np.zeros((3, 5), np.uint16)
        depth[1, 2] = 1500
        out = G.backproject(depth, depth > 0, intr).points
        np.testing.assert_allclose(out, [[0.0, 0.0, 1.5]])

    def test_pinhole_formula(self):
        intr = CameraIntrinsics(fx=100, fy=100, cx=0, cy=0, depth_scale=1.0)
        depth = np.zeros((1, 51))
        depth[0, 50] = 2
        np.testing.assert_allclose(G.backproject(depth, depth > 0, intr).points, [[1.0, 0.0, 2.0]])

    def test_zero_depth_skipped(self):
        intr = CameraIntrinsics(fx=1, fy=1, cx=0, cy=0)
        depth = np.array([[1, 0, 3], [0, 5, 0]])
        mask = np.ones_like(depth, bool)
        assert len(G.backproject(depth, mask, intr)) == 3

    def test_empty_mask(self):
        intr = CameraIntrinsics(fx=1, fy=1, cx=0, cy=0)
        with pytest.raises(G.EmptyCloudError):
            G.backproject(np.ones((2, 2)), np.zeros((2, 2), bool), intr)

    def test_size_mismatch(self):
        intr = CameraIntrinsics(fx=1, fy=1, cx=0, cy=0)
        with pytest.raises(ValueError):
            G.backproject(np.ones((2, 2)), np.ones((2, 3), bool), intr)

    def test_plane_reproduced(self):
        # render the plane z = 0.5 + 0.1 x analytically per pixel, then lift it back
        intr = CameraIntrinsics(fx=200, fy=200, cx=40, cy=30, depth_scale=1e-4)
        v, u = np.mgrid[0:60, 0:80]
        a, c = 0.1, 0.5
        # ray (u-cx)/fx * z = x ; z = c + a x  ->  z = c / (1 - a (u-cx)/fx)
        z = c / (1 - a * (u - intr.cx) / intr.fx)
        units = z / intr.depth_scale
        pts = G.backproject(units, np.ones_like(units, bool), intr).points
        np.testing.assert_allclose(pts[:, 2], c + a * pts[:, 0], rtol=0, atol=1e-9)

    def test_project_inverts_backproject(self):
        intr = CameraIntrinsics.default("toy")
        depth = np.random.default_rng(0).integers(1000, 9000, size=(intr.height, intr.width))
        pts = G.backproject(depth, np.ones_like(depth, bool), intr).points
        u, v = G.project(pts, intr)
        vv, uu = np.nonzero(np.ones_like(depth, bool))
        np.testing.assert_allclose(u, uu, atol=1e-9)
        np.testing.assert_allclose(v, vv, atol=1e-9)


class TestOutlierRemoval:
    def test_cluster_keeps_only_cluster(self):
        rng = np.random.default_rng(0)
        pts = np.vstack([rng.normal(0, 0.005, size=(30, 3)), [[1.0, 0, 0]]])
        out = G.radius_outlier_removal(cloud(pts), 0.05, 3)
        assert len(out) == 30
        assert not np.any(np.all(out.points == [1.0, 0, 0], axis=1))

    def test_zero_min_neighbors_identity(self):
        pts = np.random.default_rng(1).normal(size=(10, 3))
        assert np.array_equal(G.radius_outlier_removal(cloud(pts), 0.01, 0).points, pts)

    def test_subset(self):
        pts = np.random.default_rng(2).uniform(size=(300, 3))
        out = G.radius_outlier_removal(cloud(pts), 0.1, 4).points
        assert set(map(tuple, out)) <= set(map(tuple, pts))

    def test_radius_must_be_positive(self):
        with pytest.raises(ValueError):
            G.radius_outlier_removal(cloud([[0, 0, 0]]), 0.0, 1)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_bruteforce_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 500))
        pts = rng.uniform(0, 0.2, size=(n, 3))
        radius, k = 0.03, int(rng.integers(1, 6))
        d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
        keep = (d <= radius).sum(1) - 1 >= k
        for method in ("brute", "index"):
            out = G.radius_outlier_removal(cloud(pts), radius, k, method=method).points
            np.testing.assert_array_equal(out, pts[keep])

    def test_paths_agree_above_switch(self):
        pts = np.random.default_rng(9).uniform(0, 0.3, size=(2500, 3))
        a = G.neighbor_counts_bruteforce(pts, 0.02)
        b = G.neighbor_counts_indexed(pts, 0.02)
        assert np.array_equal(a, b)

    def test_boundary_distance_counts(self):
        pts = np.array([[0, 0, 0], [0.5, 0, 0]], float)
        assert G.neighbor_counts_bruteforce(pts, 0.5).tolist() == [1, 1]
        assert G.neighbor_counts_indexed(pts, 0.5).tolist() == [1, 1]


class TestCenterTo:
    def test_identity(self):
        c = cloud(np.random.default_rng(0).normal(size=(5, 3)))
        np.testing.assert_allclose(G.center_to(c, c).points, c.points, atol=1e-15)

    def test_shift(self):
        c = cloud(np.ones((4, 3)))
        out = G.center_to(c, cloud(np.zeros((2, 3))))
        np.testing.assert_array_equal(out.points, np.zeros((4, 3)))

    @settings(max_examples=40, deadline=None)
    @given(hnp.arrays(np.float64, (6, 3), elements=coords), hnp.arrays(np.float64, (3, 3), elements=coords))
    def test_rigid_and_centred(self, a, b):
        out = G.center_to(cloud(a), cloud(b))
        np.testing.assert_allclose(out.centroid, b.mean(0), atol=1e-9)
        d0 = np.linalg.norm(a[:, None] - a[None], axis=-1)
        d1 = np.linalg.norm(out.points[:, None] - out.points[None], axis=-1)
        np.testing.assert_allclose(d0, d1, atol=1e-9)

    def test_empty(self):
        with pytest.raises(G.EmptyCloudError):
            G.center_to(cloud(np.zeros((0, 3))), cloud([[0, 0, 0]]))


class TestNormalize:
    def test_cube_corners(self):
        corners = np.array(list(itertools.product([0.0, 2.0], repeat=3)))
        out, scale, offset = G.normalize_unit_box(cloud(corners))
        assert scale == 1.0
        np.testing.assert_array_equal(offset, [1, 1, 1])
        np.testing.assert_array_equal(out.points, corners - 1)
        assert out.frame == "canonical"

    def test_already_centred_in_box(self):
        pts = np.random.default_rng(0).uniform(-0.5, 0.5, size=(20, 3))
        pts -= (pts.min(0) + pts.max(0)) / 2
        out, scale, _ = G.normalize_unit_box(cloud(pts))
        assert scale >= 1.0 and out.in_unit_box()

    def test_single_point(self):
        out, scale, offset = G.normalize_unit_box(cloud([[3.0, -1.0, 2.0]]))
        assert scale == 1.0
        np.testing.assert_array_equal(out.points, [[0, 0, 0]])

    @settings(max_examples=50, deadline=None)
    @given(hnp.arrays(np.float64, st.tuples(st.integers(2, 20), st.just(3)), elements=coords))
    def test_round_trip_and_box(self, pts):
        out, scale, offset = G.normalize_unit_box(cloud(pts))
        assert out.in_unit_box()
        back = G.denormalize(out, scale, offset)
        np.testing.assert_allclose(back.points, pts, atol=1e-12 * max(1.0, np.abs(pts).max()))
