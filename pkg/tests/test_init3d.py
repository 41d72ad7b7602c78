"""Edge-guided initialization tests.

The inverse-depth sampler is verified with a chi-square goodness-of-fit
test against the analytic 1/d^2 density; PCA normals against hand-built
point sets; budget allocation and order independence by direct counting.
"""

import numpy as np
import pytest
from scipy.stats import chisquare

from evsplat.edges import EdgeMap
from evsplat.geometry import CameraIntrinsics, PoseSE3, quat_to_matrix
from evsplat.init3d import (
    EdgeGaussian2D,
    Gaussian3D,
    GaussianCloud,
    InitBudget,
    edge_normals,
    extract_edge_points,
    fit_edge_gaussians,
    initialize_gaussians,
    sample_inverse_depth,
)

K = CameraIntrinsics(fx=55.4, fy=55.4, cx=31.5, cy=31.5, width=64, height=64)


class TestExtractEdgePoints:
    def test_threshold_and_raster_order(self):
        v = np.zeros((8, 8))
        v[2, 5] = 0.9
        v[4, 1] = 0.3
        v[4, 3] = 0.5
        pts = extract_edge_points(EdgeMap(v), confidence_min=0.5)
        # (x, y) pairs in raster (row-major) order
        np.testing.assert_array_equal(pts, [[5.0, 2.0], [3.0, 4.0]])

    def test_invalid_threshold(self):
        with pytest.raises(ValueError):
            extract_edge_points(EdgeMap(np.zeros((4, 4))), 0.0)


class TestEdgeNormals:
    def test_horizontal_line_has_vertical_normal(self):
        pts = np.array([[x, 10.0] for x in range(12)], dtype=float)
        normals, degenerate = edge_normals(pts, k=4)
        # tangent is +-x, so the canonical normal is (0, 1)
        np.testing.assert_allclose(np.abs(normals), [[0.0, 1.0]] * 12,
                                   atol=1e-12)
        assert normals[:, 1].min() >= 0  # canonical sign
        assert not degenerate.any()

    def test_diagonal_line_normal(self):
        pts = np.array([[i, i] for i in range(12)], dtype=float)
        normals, _ = edge_normals(pts, k=4)
        s = 1.0 / np.sqrt(2.0)
        # normal perpendicular to (1,1)/sqrt(2), canonicalized to x >= 0
        np.testing.assert_allclose(normals, [[s, -s]] * 12, atol=1e-12)

    def test_coincident_points_flagged_degenerate(self):
        pts = np.zeros((6, 2))
        normals, degenerate = edge_normals(pts, k=3)
        assert degenerate.all()
        np.testing.assert_array_equal(normals, [[1.0, 0.0]] * 6)

    def test_validation(self):
        pts = np.zeros((3, 2))
        with pytest.raises(ValueError):
            edge_normals(pts, k=1)
        with pytest.raises(ValueError):
            edge_normals(pts, k=3)


class TestFitEdgeGaussians:
    def test_straight_line_single_gaussian_per_tile(self):
        # one horizontal stroke inside a single 16x16 tile: uniform normals
        # => no subdivision, one Gaussian centered on the stroke
        pts = np.array([[x, 5.0] for x in range(2, 14)], dtype=float)
        normals = np.tile([0.0, 1.0], (len(pts), 1))
        gs = fit_edge_gaussians(pts, normals, tile_size=16,
                                angle_threshold=0.2, max_depth=3)
        assert len(gs) == 1
        g = gs[0]
        np.testing.assert_allclose(g.center, pts.mean(axis=0), atol=1e-12)
        np.testing.assert_allclose(g.normal, [0.0, 1.0], atol=1e-12)
        # [DERIVED] population std of x over 2..13 is sqrt(mean((x-7.5)^2))
        xs = pts[:, 0]
        assert g.tangent_extent == pytest.approx(float(np.std(xs)), rel=1e-12)
        assert g.normal_extent == 0.5  # floor for a zero-thickness stroke
        assert g.support_count == len(pts)

    def test_corner_splits_into_multiple_gaussians(self):
        # an L-shaped corner has bimodal normals: the tile must subdivide
        pts = ([[x, 2.0] for x in range(2, 14)]
               + [[2.0, y] for y in range(3, 14)])
        pts = np.array(pts, dtype=float)
        normals, _ = edge_normals(pts, k=4)
        gs = fit_edge_gaussians(pts, normals, tile_size=16,
                                angle_threshold=0.2, max_depth=3)
        assert len(gs) > 1
        assert sum(g.support_count for g in gs) == len(pts)

    def test_depth_cap_forces_emission(self):
        pts = np.array([[x, 2.0] for x in range(2, 14)]
                       + [[2.0, y] for y in range(3, 14)], dtype=float)
        normals, _ = edge_normals(pts, k=4)
        gs = fit_edge_gaussians(pts, normals, tile_size=16,
                                angle_threshold=0.0, max_depth=0)
        # depth 0: the root tile must emit despite the mixed orientations
        assert len(gs) == 1 and gs[0].support_count == len(pts)

    def test_empty_points(self):
        assert fit_edge_gaussians(np.zeros((0, 2)), np.zeros((0, 2)),
                                  tile_size=8, angle_threshold=0.2,
                                  max_depth=2) == []

    def test_every_point_assigned_exactly_once(self):
        rng = np.random.default_rng(0)
        pts = rng.uniform(0, 40, size=(80, 2))
        normals, _ = edge_normals(pts, k=5)
        gs = fit_edge_gaussians(pts, normals, tile_size=16,
                                angle_threshold=0.2, max_depth=4)
        assert sum(g.support_count for g in gs) == len(pts)


class TestSampleInverseDepth:
    def test_endpoints(self):
        assert sample_inverse_depth(0.0, 1.0, 4.0) == pytest.approx(4.0)
        assert sample_inverse_depth(1.0, 1.0, 4.0) == pytest.approx(1.0)

    def test_chi_square_against_inverse_square_density(self):
        # [DERIVED] the warp of U(0,1) has density p(d) ∝ 1/d^2 on
        # [d_min, d_max]; bin masses follow from the exact CDF
        # F(d) = (1/d_min - 1/d) / (1/d_min - 1/d_max)
        d_min, d_max, n = 1.0, 4.0, 20000
        rng = np.random.default_rng(1)
        d = sample_inverse_depth(rng.random(n), d_min, d_max)
        edges = np.linspace(d_min, d_max, 13)
        counts, _ = np.histogram(d, bins=edges)
        cdf = (1 / d_min - 1 / edges) / (1 / d_min - 1 / d_max)
        expected = n * np.diff(cdf)
        _, p_value = chisquare(counts, expected)
        assert p_value > 0.01

    def test_validation(self):
        with pytest.raises(ValueError):
            sample_inverse_depth(0.5, 2.0, 1.0)
        with pytest.raises(ValueError):
            sample_inverse_depth(1.5, 1.0, 4.0)


class TestBudget:
    def test_split_counts(self):
        b = InitBudget(n_total=600, r_edge=0.3)
        assert b.n_edge == 180 and b.n_random == 420

    def test_zero_edge_ratio(self):
        b = InitBudget(n_total=10, r_edge=0.0)
        assert b.n_edge == 0 and b.n_random == 10

    def test_validation(self):
        with pytest.raises(ValueError):
            InitBudget(n_total=0, r_edge=0.5)
        with pytest.raises(ValueError):
            InitBudget(n_total=10, r_edge=1.5)


def make_edge_gaussians():
    return [
        EdgeGaussian2D(center=[20.0, 30.0], normal=[0.0, 1.0],
                       tangent_extent=4.0, normal_extent=0.6,
                       support_count=9),
        EdgeGaussian2D(center=[40.0, 12.0], normal=[1.0, 0.0],
                       tangent_extent=2.0, normal_extent=0.5,
                       support_count=5),
        EdgeGaussian2D(center=[33.0, 50.0],
                       normal=np.array([1.0, 1.0]) / np.sqrt(2.0),
                       tangent_extent=3.0, normal_extent=0.7,
                       support_count=7),
    ]


class TestInitializeGaussians:
    def test_budget_and_allocation(self):
        cloud = initialize_gaussians(
            make_edge_gaussians(), InitBudget(100, 0.3), K,
            PoseSE3.identity(), 1.0, 4.0, rng_seed=0)
        assert len(cloud) == 100
        # floor(0.3*100)=30 edge samples: 3 Gaussians -> 10 each
        assert int((cloud.origin == 1).sum()) == 30
        assert int((cloud.origin == 0).sum()) == 70

    def test_leftover_goes_to_first_gaussians(self):
        # n_edge=8 over 3 Gaussians: counts 3, 3, 2
        gs = make_edge_gaussians()
        cloud = initialize_gaussians(gs, InitBudget(27, 0.3), K,
                                     PoseSE3.identity(), 1.0, 4.0, rng_seed=0)
        edge_mu = cloud.mu[cloud.origin == 1]
        proj = K.project(edge_mu)
        counts = [int(np.sum(np.linalg.norm(proj - g.center, axis=1) < 1e-6))
                  for g in gs]
        assert counts == [3, 3, 2]

    def test_edge_samples_lie_on_viewing_ray(self):
        gs = make_edge_gaussians()
        cloud = initialize_gaussians(gs, InitBudget(60, 0.5), K,
                                     PoseSE3.identity(), 1.0, 4.0, rng_seed=3)
        edge_mu = cloud.mu[cloud.origin == 1]
        proj = K.project(edge_mu)
        centers = np.array([g.center for g in gs])
        d = np.linalg.norm(proj[:, None, :] - centers[None, :, :], axis=-1)
        assert d.min(axis=1).max() < 1e-9
        assert edge_mu[:, 2].min() >= 1.0 and edge_mu[:, 2].max() <= 4.0

    def test_edge_gaussian_smallest_axis_is_normal(self):
        g = make_edge_gaussians()[0]  # normal (0, 1)
        cloud = initialize_gaussians([g], InitBudget(4, 1.0), K,
                                     PoseSE3.identity(), 1.0, 4.0, rng_seed=1)
        for i in range(len(cloud)):
            R = quat_to_matrix(cloud.quat[i])
            k = int(np.argmin(cloud.scales[i]))
            axis = R[:, k]
            # smallest principal axis aligns with the image-plane normal
            np.testing.assert_allclose(np.abs(axis), [0.0, 1.0, 0.0],
                                       atol=1e-12)

    def test_random_fill_inside_frustum(self):
        cloud = initialize_gaussians([], InitBudget(200, 0.3), K,
                                     PoseSE3.identity(), 1.0, 4.0, rng_seed=2)
        assert (cloud.origin == 0).all()
        z = cloud.mu[:, 2]
        assert z.min() >= 1.0 and z.max() <= 4.0
        proj = K.project(cloud.mu)
        assert proj[:, 0].min() >= -1e-9 and proj[:, 0].max() <= 63 + 1e-9
        assert proj[:, 1].min() >= -1e-9 and proj[:, 1].max() <= 63 + 1e-9

    def test_random_color_override(self):
        cloud = initialize_gaussians(
            make_edge_gaussians(), InitBudget(40, 0.5), K,
            PoseSE3.identity(), 1.0, 4.0, rng_seed=0, color=0.5,
            random_color=0.4)
        np.testing.assert_array_equal(cloud.color[cloud.origin == 1], 0.5)
        np.testing.assert_array_equal(cloud.color[cloud.origin == 0], 0.4)

    def test_samples_keyed_per_index(self):
        # swapping the later entries leaves the first entry's samples intact
        gs = make_edge_gaussians()
        swapped = [gs[0], gs[2], gs[1]]
        a = initialize_gaussians(gs, InitBudget(30, 1.0), K,
                                 PoseSE3.identity(), 1.0, 4.0, rng_seed=7)
        b = initialize_gaussians(swapped, InitBudget(30, 1.0), K,
                                 PoseSE3.identity(), 1.0, 4.0, rng_seed=7)
        # 30 edge samples over 3 Gaussians -> 10 each, emitted in order
        np.testing.assert_array_equal(a.mu[:10], b.mu[:10])

    def test_determinism(self):
        gs = make_edge_gaussians()
        a = initialize_gaussians(gs, InitBudget(50, 0.4), K,
                                 PoseSE3.identity(), 1.0, 4.0, rng_seed=9)
        b = initialize_gaussians(gs, InitBudget(50, 0.4), K,
                                 PoseSE3.identity(), 1.0, 4.0, rng_seed=9)
        np.testing.assert_array_equal(a.mu, b.mu)
        np.testing.assert_array_equal(a.scales, b.scales)

    def test_depth_validation(self):
        with pytest.raises(ValueError):
            initialize_gaussians([], InitBudget(10, 0.0), K,
                                 PoseSE3.identity(), 4.0, 1.0, rng_seed=0)


class TestDataClasses:
    def test_gaussian3d_validation(self):
        good = dict(mu=[0, 0, 2.0], scales=[0.1, 0.1, 0.1],
                    quat=[1, 0, 0, 0], opacity=0.5, color=0.5,
                    origin_tag="edge")
        Gaussian3D(**good)
        for bad in [dict(good, scales=[0.1, 0.0, 0.1]),
                    dict(good, opacity=1.0),
                    dict(good, color=1.5),
                    dict(good, origin_tag="other")]:
            with pytest.raises(ValueError):
                Gaussian3D(**bad)

    def test_covariance_matches_rotated_diagonal(self):
        g = Gaussian3D([0, 0, 1.0], [0.3, 0.2, 0.1],
                       np.array([1.0, 1.0, 0.0, 0.0]) / np.sqrt(2.0),
                       0.5, 0.5, "edge")
        R = quat_to_matrix(g.quat)
        ref = R @ np.diag(np.array([0.3, 0.2, 0.1]) ** 2) @ R.T
        np.testing.assert_allclose(g.covariance, ref, atol=1e-14)

    def test_cloud_round_trip(self):
        gs = [Gaussian3D([0, 0, 2.0], [0.1] * 3, [1, 0, 0, 0], 0.5, 0.4,
                         "edge"),
              Gaussian3D([1, 1, 3.0], [0.2] * 3, [1, 0, 0, 0], 0.3, 0.6,
                         "random")]
        cloud = GaussianCloud.from_gaussians(gs)
        back = cloud.to_gaussians()
        assert [g.origin_tag for g in back] == ["edge", "random"]
        np.testing.assert_array_equal(back[1].mu, [1, 1, 3.0])

    def test_cloud_length_mismatch(self):
        with pytest.raises(ValueError):
            GaussianCloud(mu=np.zeros((2, 3)), scales=np.ones((2, 3)),
                          quat=np.tile([1.0, 0, 0, 0], (2, 1)),
                          opacity=[0.5], color=[0.5, 0.5])

    def test_edge_gaussian_2d_validation(self):
        with pytest.raises(ValueError):
            EdgeGaussian2D(center=[0, 0], normal=[2.0, 0.0],
                           tangent_extent=1.0, normal_extent=0.5,
                           support_count=1)
        with pytest.raises(ValueError):
            EdgeGaussian2D(center=[0, 0], normal=[1.0, 0.0],
                           tangent_extent=0.4, normal_extent=0.5,
                           support_count=1)
