"""Evaluation: PSNR / SSIM with a pre-metric linear brightness transform,
and ATE RMSE after closed-form rigid trajectory alignment.

Event-supervised reconstructions have no absolute brightness scale, so
predictions are fitted to the ground truth with a least-squares affine map
before image metrics are computed.  Trajectories are associated by nearest
timestamp and aligned with a no-scale Umeyama fit (a scale-aligned variant
exists for diagnostics only).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from evsplat.geometry import PoseSE3
from evsplat.losses import ssim  # shared SSIM kernel

PSNR_INF = math.inf  # sentinel for a zero-MSE comparison


@dataclass(frozen=True)
class Trajectory:
    """Timestamped pose samples, strictly increasing in time (seconds)."""

    samples: tuple  # of (timestamp, PoseSE3)

    def __post_init__(self):
        samples = tuple(self.samples)
        times = [s[0] for s in samples]
        if any(t1 <= t0 for t0, t1 in zip(times, times[1:])):
            raise ValueError("timestamps must be strictly increasing")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def times(self) -> np.ndarray:
        return np.array([s[0] for s in self.samples])

    @property
    def positions(self) -> np.ndarray:
        return np.array([s[1].trans for s in self.samples])


def linear_color_transform(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Least-squares a*pred + b fitted to gt; constant pred maps to mean(gt)."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError("shape mismatch")
    var = float(np.var(pred))
    if var < 1e-15:
        return np.full_like(pred, float(np.mean(gt)))
    a = float(np.mean((pred - pred.mean()) * (gt - gt.mean()))) / var
    b = float(gt.mean() - a * pred.mean())
    return a * pred + b


def psnr(pred: np.ndarray, gt: np.ndarray, peak: float) -> float:
    """10*log10(peak^2 / MSE); PSNR_INF when the images are identical."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError("shape mismatch")
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((pred - gt) ** 2))
    if mse == 0.0:
        return PSNR_INF
    return 10.0 * math.log10(peak**2 / mse)


def associate(est: Trajectory, gt: Trajectory, tolerance: float = 1e-3):
    """Nearest-timestamp association within `tolerance` seconds.

    Returns (est_positions, gt_positions, n_dropped).
    """
    gt_times = gt.times
    pairs = []
    dropped = 0
    for ts, pose in est.samples:
        i = int(np.argmin(np.abs(gt_times - ts)))
        if abs(gt_times[i] - ts) <= tolerance:
            pairs.append((pose.trans, gt.samples[i][1].trans))
        else:
            dropped += 1
    if not pairs:
        return np.zeros((0, 3)), np.zeros((0, 3)), dropped
    est_p = np.array([p[0] for p in pairs])
    gt_p = np.array([p[1] for p in pairs])
    return est_p, gt_p, dropped


def umeyama_align(est: Trajectory, gt: Trajectory, tolerance: float = 1e-3,
                  with_scale: bool = False):
    """Closed-form least-squares rigid alignment of associated positions.

    Returns (PoseSE3, scale); scale is 1.0 unless `with_scale` (diagnostics
    only).  The aligned estimate is ``scale * R @ p_est + t``.
    """
    est_p, gt_p, _ = associate(est, gt, tolerance)
    if len(est_p) < 3:
        raise ValueError("need at least 3 associated pose pairs")
    mu_e = est_p.mean(axis=0)
    mu_g = gt_p.mean(axis=0)
    xe = est_p - mu_e
    xg = gt_p - mu_g
    cov = xg.T @ xe / len(est_p)
    U, D, Vt = np.linalg.svd(cov)
    if np.linalg.matrix_rank(np.diag(D), tol=1e-12 * max(D[0], 1.0)) < 2:
        raise ValueError("degenerate (collinear) trajectory for alignment")
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    if with_scale:
        var_e = float(np.mean(np.sum(xe**2, axis=1)))
        scale = float(np.trace(np.diag(D) @ S)) / var_e
    else:
        scale = 1.0
    t = mu_g - scale * R @ mu_e
    return PoseSE3.from_matrix(R, t), scale


def ate_rmse(est: Trajectory, gt: Trajectory, tolerance: float = 1e-3,
             with_scale: bool = False) -> float:
    """RMSE of position residuals after rigid alignment (meters)."""
    est_p, gt_p, _ = associate(est, gt, tolerance)
    align, scale = umeyama_align(est, gt, tolerance, with_scale=with_scale)
    aligned = scale * est_p @ align.rotation.T + align.trans
    return float(np.sqrt(np.mean(np.sum((aligned - gt_p) ** 2, axis=1))))
