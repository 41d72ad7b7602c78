"""Evaluation metric tests.

skimage.metrics.structural_similarity (Gaussian-weighted, population
statistics) is the independent SSIM reference; Umeyama alignment is checked
by round-tripping known rigid/similarity transforms.
"""

import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation
from skimage.metrics import structural_similarity

from evsplat.geometry import PoseSE3, matrix_to_quat
from evsplat.metrics import (
    PSNR_INF,
    Trajectory,
    associate,
    ate_rmse,
    linear_color_transform,
    psnr,
    ssim,
    umeyama_align,
)


def make_traj(positions, rots=None, t0=0.0, dt=0.1):
    samples = []
    for i, p in enumerate(positions):
        q = np.array([1.0, 0, 0, 0]) if rots is None else rots[i]
        samples.append((t0 + i * dt, PoseSE3(q, np.asarray(p, dtype=float))))
    return Trajectory(tuple(samples))


def random_positions(rng, n=12):
    # non-degenerate (non-collinear) 3D path
    return rng.normal(size=(n, 3)) * [1.0, 0.5, 2.0] + [0, 1, 3]


class TestLinearColorTransform:
    def test_recovers_affine_map(self):
        rng = np.random.default_rng(0)
        pred = rng.uniform(size=(16, 16))
        gt = 2.5 * pred - 0.7
        np.testing.assert_allclose(linear_color_transform(pred, gt), gt,
                                   atol=1e-12)

    def test_constant_prediction_maps_to_mean(self):
        gt = np.linspace(0, 1, 64).reshape(8, 8)
        out = linear_color_transform(np.full((8, 8), 0.3), gt)
        np.testing.assert_allclose(out, gt.mean(), atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            linear_color_transform(np.zeros((2, 2)), np.zeros((3, 3)))


class TestPSNR:
    def test_uniform_point_one_error_is_20db(self):
        # [DERIVED] 10*log10(1 / 0.1^2) = 20 exactly
        gt = np.full((32, 32), 0.5)
        assert psnr(gt + 0.1, gt, peak=1.0) == pytest.approx(20.0, abs=1e-9)

    def test_identical_is_inf(self):
        img = np.random.default_rng(1).uniform(size=(8, 8))
        assert psnr(img, img, peak=1.0) is PSNR_INF

    def test_peak_scaling(self):
        # [DERIVED] doubling peak adds 20*log10(2) dB
        rng = np.random.default_rng(2)
        a, b = rng.uniform(size=(8, 8)), rng.uniform(size=(8, 8))
        assert psnr(a, b, 2.0) - psnr(a, b, 1.0) == \
            pytest.approx(20 * math.log10(2), abs=1e-12)

    def test_invalid_peak(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((8, 8)), np.zeros((8, 8)), peak=0.0)


class TestSSIM:
    def reference(self, x, y):
        drange = max(max(x.max(), y.max()) - min(x.min(), y.min()), 1.0)
        return structural_similarity(
            x, y, win_size=11, gaussian_weights=True, sigma=1.5,
            use_sample_covariance=False, data_range=drange)

    def test_matches_independent_reference(self):
        rng = np.random.default_rng(3)
        for scale in [1.0, 3.0, 0.2]:
            x = rng.uniform(size=(24, 24)) * scale
            y = x + rng.normal(scale=0.1 * scale, size=(24, 24))
            assert ssim(x, y) == pytest.approx(self.reference(x, y), abs=1e-7)

    def test_identical_images(self):
        img = np.random.default_rng(4).uniform(size=(16, 16))
        assert ssim(img, img) == pytest.approx(1.0, abs=1e-12)

    def test_symmetry(self):
        rng = np.random.default_rng(5)
        x, y = rng.uniform(size=(16, 16)), rng.uniform(size=(16, 16))
        assert ssim(x, y) == pytest.approx(ssim(y, x), abs=1e-14)

    def test_too_small_input(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))


class TestTrajectoryAndAssociate:
    def test_rejects_non_increasing_times(self):
        p = PoseSE3.identity()
        with pytest.raises(ValueError):
            Trajectory(((0.0, p), (0.0, p)))

    def test_association_within_tolerance(self):
        gt = make_traj([[0, 0, 0], [1, 0, 0], [2, 0, 0]])
        est = Trajectory(((0.0004, PoseSE3.identity()),
                          (0.1002, PoseSE3.identity()),
                          (0.5, PoseSE3.identity())))
        est_p, gt_p, dropped = associate(est, gt)
        assert len(est_p) == 2 and dropped == 1
        np.testing.assert_allclose(gt_p, [[0, 0, 0], [1, 0, 0]])


class TestUmeyama:
    def test_round_trip_recovers_rigid_transform(self):
        rng = np.random.default_rng(6)
        pos = random_positions(rng)
        R = Rotation.from_rotvec([0.3, -0.2, 0.9]).as_matrix()
        t = np.array([1.0, -2.0, 0.5])
        gt = make_traj(pos @ R.T + t)
        est = make_traj(pos)
        align, scale = umeyama_align(est, gt)
        assert scale == 1.0
        np.testing.assert_allclose(align.rotation, R, atol=1e-9)
        np.testing.assert_allclose(align.trans, t, atol=1e-9)

    def test_with_scale_recovers_similarity(self):
        rng = np.random.default_rng(7)
        pos = random_positions(rng)
        R = Rotation.from_rotvec([-0.1, 0.4, 0.2]).as_matrix()
        gt = make_traj(1.7 * pos @ R.T + [0.2, 0.1, -0.3])
        align, scale = umeyama_align(make_traj(pos), gt, with_scale=True)
        assert scale == pytest.approx(1.7, abs=1e-9)
        np.testing.assert_allclose(align.rotation, R, atol=1e-9)

    def test_collinear_is_error(self):
        line = make_traj([[i, 0, 0] for i in range(6)])
        with pytest.raises(ValueError):
            umeyama_align(line, line)


class TestATE:
    def test_identical_trajectories_zero(self):
        rng = np.random.default_rng(8)
        traj = make_traj(random_positions(rng))
        assert ate_rmse(traj, traj) == pytest.approx(0.0, abs=1e-12)

    def test_rigidly_displaced_trajectory_zero(self):
        rng = np.random.default_rng(9)
        pos = random_positions(rng)
        R = Rotation.from_rotvec([0.0, 0.5, 0.0]).as_matrix()
        assert ate_rmse(make_traj(pos), make_traj(pos @ R.T + [3, 0, 1])) \
            == pytest.approx(0.0, abs=1e-9)

    def test_known_residual(self):
        # [DERIVED] perturb one of n points by delta along z after alignment is
        # impossible to undo fully; compare against a brute-force grid check
        rng = np.random.default_rng(10)
        pos = random_positions(rng, n=8)
        noisy = pos.copy()
        noisy[0, 2] += 0.2
        ate = ate_rmse(make_traj(noisy), make_traj(pos))
        # alignment can only reduce the raw RMSE
        raw = np.sqrt(np.mean(np.sum((noisy - pos) ** 2, axis=1)))
        assert 0.0 < ate <= raw + 1e-12
