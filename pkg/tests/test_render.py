"""Renderer tests.

The forward pass is verified against a brute-force per-pixel sequential
alpha-blending reference; all analytic gradients against central finite
differences of the scalar sum(upstream_grad * image).
"""

import numpy as np
import pytest

from evsplat.geometry import CameraIntrinsics, PoseSE3
from evsplat.init3d import GaussianCloud
from evsplat.render import (
    ALPHA_MAX,
    COV2D_FLOOR,
    CUTOFF_SIGMA,
    IMAGE_FLOOR,
    RenderOutput,
    project,
    rasterize,
    rasterize_with_grad,
    synthesize_event_map,
)

K = CameraIntrinsics(fx=27.7, fy=27.7, cx=15.5, cy=15.5, width=32, height=32)
BG = 0.4


def random_cloud(seed, n=5, opacity_max=0.85):
    rng = np.random.default_rng(seed)
    quat = rng.normal(size=(n, 4))
    quat /= np.linalg.norm(quat, axis=1, keepdims=True)
    mu = np.stack([rng.uniform(-0.4, 0.4, n), rng.uniform(-0.4, 0.4, n),
                   rng.uniform(1.5, 3.0, n)], axis=1)
    return GaussianCloud(
        mu=mu, scales=rng.uniform(0.05, 0.25, size=(n, 3)), quat=quat,
        opacity=rng.uniform(0.3, opacity_max, n),
        color=rng.uniform(0.1, 0.9, n))


def reference_render(cloud, pose, K, background):
    """Per-pixel sequential front-to-back blending with the same projection
    model and 3-sigma bounding boxes as the vectorized renderer."""
    splats = []
    for g in cloud.to_gaussians():
        s = project(g, pose, K)
        if s is not None:
            splats.append(s)
    splats.sort(key=lambda s: s.depth)
    img = np.zeros((K.height, K.width))
    for py in range(K.height):
        for px in range(K.width):
            T = 1.0
            acc = 0.0
            for s in splats:
                lam = np.linalg.inv(s.cov2d)
                r = CUTOFF_SIGMA * np.sqrt(np.linalg.eigvalsh(s.cov2d)[-1])
                # same integer bounding box as the vectorized renderer
                x0 = max(int(np.floor(s.mean2d[0] - r)), 0)
                x1 = min(int(np.ceil(s.mean2d[0] + r)) + 1, K.width)
                y0 = max(int(np.floor(s.mean2d[1] - r)), 0)
                y1 = min(int(np.ceil(s.mean2d[1] + r)) + 1, K.height)
                if not (x0 <= px < x1 and y0 <= py < y1):
                    continue
                d = np.array([px, py]) - s.mean2d
                alpha = min(s.opacity * np.exp(-0.5 * d @ lam @ d), ALPHA_MAX)
                acc += s.color * alpha * T
                T *= 1.0 - alpha
            img[py, px] = acc + background * T
    return np.clip(img, IMAGE_FLOOR, 1.0)


class TestProject:
    def test_center_gaussian_projects_to_principal_point(self):
        cloud = GaussianCloud(mu=[[0.0, 0.0, 2.0]], scales=[[0.1] * 3],
                              quat=[[1.0, 0, 0, 0]], opacity=[0.5],
                              color=[0.5])
        s = project(cloud, PoseSE3.identity(), K)
        np.testing.assert_allclose(s.mean2d, [K.cx, K.cy], atol=1e-12)
        assert s.depth == pytest.approx(2.0)

    def test_isotropic_covariance_value(self):
        # [DERIVED] an isotropic Gaussian on the optical axis projects to
        # (fx * s / z)^2 per axis, plus the low-pass floor
        s_world, z = 0.1, 2.0
        cloud = GaussianCloud(mu=[[0.0, 0.0, z]], scales=[[s_world] * 3],
                              quat=[[1.0, 0, 0, 0]], opacity=[0.5],
                              color=[0.5])
        s = project(cloud, PoseSE3.identity(), K)
        expected = (K.fx * s_world / z) ** 2 + COV2D_FLOOR
        np.testing.assert_allclose(np.diag(s.cov2d), expected, rtol=1e-12)

    def test_behind_camera_is_culled(self):
        cloud = GaussianCloud(mu=[[0.0, 0.0, -1.0]], scales=[[0.1] * 3],
                              quat=[[1.0, 0, 0, 0]], opacity=[0.5],
                              color=[0.5])
        assert project(cloud, PoseSE3.identity(), K) is None

    def test_far_off_image_is_culled(self):
        cloud = GaussianCloud(mu=[[50.0, 0.0, 2.0]], scales=[[0.01] * 3],
                              quat=[[1.0, 0, 0, 0]], opacity=[0.5],
                              color=[0.5])
        assert project(cloud, PoseSE3.identity(), K) is None


class TestRasterizeForward:
    def test_matches_brute_force_reference(self):
        for seed in range(4):
            cloud = random_cloud(seed)
            out = rasterize(cloud, PoseSE3.identity(), K, BG)
            ref = reference_render(cloud, PoseSE3.identity(), K, BG)
            np.testing.assert_allclose(out.image, ref, atol=1e-10)

    def test_empty_cloud_renders_background(self):
        cloud = GaussianCloud(mu=[[0.0, 0.0, -5.0]], scales=[[0.1] * 3],
                              quat=[[1.0, 0, 0, 0]], opacity=[0.5],
                              color=[0.5])
        out = rasterize(cloud, PoseSE3.identity(), K, BG)
        np.testing.assert_array_equal(out.image, BG)
        np.testing.assert_array_equal(out.transmittance, 1.0)

    def test_background_colored_cloud_is_invisible(self):
        # partition of unity: sum(alpha_i * T_i) + T_final = 1, so Gaussians
        # whose color equals the background blend back to the background
        cloud = random_cloud(5)
        cloud.color[:] = BG
        out = rasterize(cloud, PoseSE3.identity(), K, BG)
        np.testing.assert_allclose(out.image, BG, atol=1e-12)

    def test_deterministic_bitwise(self):
        cloud = random_cloud(6, n=40)
        a = rasterize(cloud, PoseSE3.identity(), K, BG)
        b = rasterize(cloud.copy(), PoseSE3.identity(), K, BG)
        assert np.array_equal(a.image, b.image)

    def test_opaque_near_splat_occludes(self):
        # a nearly opaque near Gaussian in front of a far one: the pixel
        # color approaches the near splat's color
        cloud = GaussianCloud(
            mu=[[0.0, 0.0, 1.0], [0.0, 0.0, 3.0]],
            scales=[[0.3] * 3, [0.3] * 3],
            quat=[[1.0, 0, 0, 0]] * 2, opacity=[0.98, 0.9],
            color=[0.9, 0.1])
        out = rasterize(cloud, PoseSE3.identity(), K, BG)
        center = out.image[16, 16]
        assert abs(center - 0.9) < 0.05

    def test_image_range_clamped(self):
        cloud = random_cloud(7)
        out = rasterize(cloud, PoseSE3.identity(), K, BG)
        assert out.image.min() >= IMAGE_FLOOR and out.image.max() <= 1.0


class TestSynthesizeEventMap:
    def test_log_difference(self):
        rng = np.random.default_rng(0)
        a = rng.uniform(0.2, 1.0, size=(8, 8))
        b = rng.uniform(0.2, 1.0, size=(8, 8))
        np.testing.assert_allclose(synthesize_event_map(a, b),
                                   np.log(b) - np.log(a), atol=1e-15)

    def test_identical_images_zero(self):
        img = np.full((4, 4), 0.5)
        np.testing.assert_array_equal(synthesize_event_map(img, img), 0.0)

    def test_rejects_non_positive(self):
        with pytest.raises(ValueError):
            synthesize_event_map(np.zeros((2, 2)), np.ones((2, 2)))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            synthesize_event_map(np.ones((2, 2)), np.ones((3, 3)))


def scalar_objective(cloud, pose, upstream):
    return float(np.sum(upstream * rasterize(cloud, pose, K, BG).image))


class TestGradients:
    """Central finite differences of sum(upstream * image) per parameter."""

    def setup_method(self):
        rng = np.random.default_rng(42)
        self.cloud = random_cloud(10)
        self.upstream = rng.normal(size=(32, 32))
        self.pose = PoseSE3.identity()
        self.grads = rasterize_with_grad(self.cloud, self.pose, K, BG,
                                         self.upstream)

    def fd_param(self, attr, eps=1e-6):
        arr = getattr(self.cloud, attr)
        fd = np.zeros_like(arr, dtype=np.float64)
        for idx in np.ndindex(arr.shape):
            c = self.cloud.copy()
            getattr(c, attr)[idx] += eps
            hi = scalar_objective(c, self.pose, self.upstream)
            c = self.cloud.copy()
            getattr(c, attr)[idx] -= eps
            lo = scalar_objective(c, self.pose, self.upstream)
            fd[idx] = (hi - lo) / (2 * eps)
        return fd

    @pytest.mark.parametrize("attr", ["mu", "scales", "quat", "opacity",
                                      "color"])
    def test_parameter_gradients_match_fd(self, attr):
        fd = self.fd_param(attr)
        analytic = getattr(self.grads, attr)
        scale = max(np.abs(fd).max(), 1e-8)
        np.testing.assert_allclose(analytic, fd, atol=1e-4 * scale)

    def test_pose_gradient_matches_fd(self):
        rng = np.random.default_rng(1)
        eps = 1e-6
        for _ in range(6):
            d = rng.normal(size=6)
            d /= np.linalg.norm(d)
            hi = scalar_objective(self.cloud, self.pose.retract(eps * d),
                                  self.upstream)
            lo = scalar_objective(self.cloud, self.pose.retract(-eps * d),
                                  self.upstream)
            fd = (hi - lo) / (2 * eps)
            assert float(self.grads.pose @ d) == pytest.approx(
                fd, rel=1e-4, abs=1e-8)

    def test_nonidentity_pose_gradients(self):
        rng = np.random.default_rng(2)
        pose = PoseSE3.identity().retract(
            np.array([0.02, -0.01, 0.03, 0.1, -0.05, 0.02]))
        grads = rasterize_with_grad(self.cloud, pose, K, BG, self.upstream)
        eps = 1e-6
        for _ in range(4):
            d = rng.normal(size=6)
            d /= np.linalg.norm(d)
            hi = scalar_objective(self.cloud, pose.retract(eps * d),
                                  self.upstream)
            lo = scalar_objective(self.cloud, pose.retract(-eps * d),
                                  self.upstream)
            fd = (hi - lo) / (2 * eps)
            assert float(grads.pose @ d) == pytest.approx(fd, rel=1e-4,
                                                          abs=1e-8)

    def test_upstream_shape_validated(self):
        with pytest.raises(ValueError):
            rasterize_with_grad(self.cloud, self.pose, K, BG,
                                np.zeros((8, 8)))

    def test_culled_gaussians_get_zero_gradient(self):
        cloud = random_cloud(11)
        cloud.mu[2, 2] = -1.0  # behind the camera
        grads = rasterize_with_grad(cloud, self.pose, K, BG, self.upstream)
        assert np.all(grads.mu[2] == 0.0)
        assert grads.color[2] == 0.0
