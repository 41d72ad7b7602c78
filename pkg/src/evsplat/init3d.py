"""Edge-guided 3D Gaussian initialization.

Edge pixels from the confidence map get PCA normals from their k nearest
neighbors, oriented 2D edge Gaussians are fitted by recursive tile
subdivision on the circular spread of normal orientations, and each 2D
Gaussian is lifted to 3D by inverse-depth sampling along its viewing ray.
The remaining budget is filled with random frustum points for texture-less
surfaces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from evsplat.edges import EdgeMap
from evsplat.geometry import CameraIntrinsics, PoseSE3, backproject, matrix_to_quat, quat_to_matrix


@dataclass(frozen=True)
class EdgeGaussian2D:
    center: np.ndarray        # (2,) pixel coordinates
    normal: np.ndarray        # (2,) unit, canonicalized
    tangent_extent: float     # pixels, >= normal_extent
    normal_extent: float
    support_count: int
    degenerate: bool = False

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))
        object.__setattr__(self, "normal", np.asarray(self.normal, dtype=np.float64))
        if abs(np.linalg.norm(self.normal) - 1.0) > 1e-9:
            raise ValueError("normal must be unit-norm")
        if not (self.tangent_extent >= self.normal_extent > 0):
            raise ValueError("need tangent_extent >= normal_extent > 0")
        if self.support_count < 1:
            raise ValueError("support_count must be >= 1")


@dataclass(frozen=True)
class Gaussian3D:
    mu: np.ndarray       # (3,) world frame
    scales: np.ndarray   # (3,) positive
    quat: np.ndarray     # (4,) unit (w, x, y, z)
    opacity: float       # (0, 1)
    color: float         # [0, 1] grayscale
    origin_tag: str      # 'edge' or 'random'

    def __post_init__(self):
        for name in ("mu", "scales", "quat"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if np.any(self.scales <= 0):
            raise ValueError("scales must be positive")
        if not (0.0 < self.opacity < 1.0):
            raise ValueError("opacity must be in (0, 1)")
        if not (0.0 <= self.color <= 1.0):
            raise ValueError("color must be in [0, 1]")
        if self.origin_tag not in ("edge", "random"):
            raise ValueError("origin_tag must be 'edge' or 'random'")

    @property
    def covariance(self) -> np.ndarray:
        R = quat_to_matrix(self.quat)
        return R @ np.diag(self.scales**2) @ R.T


class GaussianCloud:
    """Struct-of-arrays scene model: the renderer and optimizer operate on
    these arrays directly."""

    def __init__(self, mu, scales, quat, opacity, color, origin=None):
        self.mu = np.atleast_2d(np.asarray(mu, dtype=np.float64))
        self.scales = np.atleast_2d(np.asarray(scales, dtype=np.float64))
        self.quat = np.atleast_2d(np.asarray(quat, dtype=np.float64))
        self.opacity = np.atleast_1d(np.asarray(opacity, dtype=np.float64))
        self.color = np.atleast_1d(np.asarray(color, dtype=np.float64))
        n = len(self.mu)
        self.origin = (np.atleast_1d(np.asarray(origin, dtype=np.int8))
                       if origin is not None else np.zeros(n, dtype=np.int8))
        if not (len(self.scales) == len(self.quat) == len(self.opacity)
                == len(self.color) == len(self.origin) == n):
            raise ValueError("inconsistent cloud array lengths")

    def __len__(self) -> int:
        return len(self.mu)

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(self.mu.copy(), self.scales.copy(), self.quat.copy(),
                             self.opacity.copy(), self.color.copy(), self.origin.copy())

    @staticmethod
    def from_gaussians(gaussians) -> "GaussianCloud":
        gaussians = list(gaussians)
        return GaussianCloud(
            mu=[g.mu for g in gaussians],
            scales=[g.scales for g in gaussians],
            quat=[g.quat for g in gaussians],
            opacity=[g.opacity for g in gaussians],
            color=[g.color for g in gaussians],
            origin=[1 if g.origin_tag == "edge" else 0 for g in gaussians])

    def to_gaussians(self) -> list[Gaussian3D]:
        return [Gaussian3D(self.mu[i], self.scales[i], self.quat[i],
                           float(self.opacity[i]), float(self.color[i]),
                           "edge" if self.origin[i] == 1 else "random")
                for i in range(len(self))]


@dataclass(frozen=True)
class InitBudget:
    n_total: int
    r_edge: float

    def __post_init__(self):
        if self.n_total <= 0:
            raise ValueError("n_total must be positive")
        if not (0.0 <= self.r_edge <= 1.0):
            raise ValueError("r_edge must be in [0, 1]")

    @property
    def n_edge(self) -> int:
        return int(math.floor(self.r_edge * self.n_total))

    @property
    def n_random(self) -> int:
        return self.n_total - self.n_edge


def extract_edge_points(edge_map: EdgeMap, confidence_min: float) -> np.ndarray:
    """Pixel centers (x, y) where confidence >= confidence_min, raster order."""
    if not (0.0 < confidence_min <= 1.0):
        raise ValueError("confidence_min must be in (0, 1]")
    ys, xs = np.nonzero(edge_map.values >= confidence_min)
    return np.stack([xs, ys], axis=-1).astype(np.float64)


def edge_normals(points: np.ndarray, k: int):
    """Per-point edge normal from PCA over the k nearest neighbors.

    The tangent is the dominant eigenvector of the neighbor scatter; the
    normal is its perpendicular, sign-canonicalized to non-negative x
    (ties broken toward non-negative y).  Returns (normals, degenerate_flags).
    """
    points = np.asarray(points, dtype=np.float64)
    if k < 2:
        raise ValueError("k must be >= 2")
    if len(points) < k + 1:
        raise ValueError(f"need at least k+1={k + 1} points")
    tree = cKDTree(points)
    _, idx = tree.query(points, k=k + 1)  # includes the point itself
    normals = np.zeros((len(points), 2))
    degenerate = np.zeros(len(points), dtype=bool)
    for i in range(len(points)):
        nb = points[idx[i]]
        centered = nb - nb.mean(axis=0)
        scatter = centered.T @ centered / len(nb)
        eigvals, eigvecs = np.linalg.eigh(scatter)
        if eigvals[-1] < 1e-12:
            normals[i] = (1.0, 0.0)
            degenerate[i] = True
            continue
        tangent = eigvecs[:, -1]
        n = np.array([-tangent[1], tangent[0]])
        if n[0] < 0 or (n[0] == 0 and n[1] < 0):
            n = -n
        normals[i] = n
    return normals, degenerate


def _circular_stats_axial(angles: np.ndarray):
    """Mean direction and circular std of axial data (angles modulo pi).

    Uses the double-angle embedding; the returned std is halved back to the
    axial scale.
    """
    doubled = 2.0 * angles
    c = np.cos(doubled).mean()
    s = np.sin(doubled).mean()
    r = math.hypot(c, s)
    mean_angle = 0.5 * math.atan2(s, c)
    if r >= 1.0:
        std = 0.0
    else:
        std = 0.5 * math.sqrt(max(-2.0 * math.log(max(r, 1e-300)), 0.0))
    return mean_angle, std


def fit_edge_gaussians(points: np.ndarray, normals: np.ndarray, tile_size: int,
                       angle_threshold: float, max_depth: int) -> list[EdgeGaussian2D]:
    """Recursive tile fitting of oriented 2D edge Gaussians.

    A tile emits one Gaussian when the circular standard deviation of its
    normal orientations (axial, modulo pi) falls below `angle_threshold` or
    the recursion depth cap is reached; otherwise it splits into quadrants.
    Empty tiles emit nothing.
    """
    if tile_size < 2:
        raise ValueError("tile_size must be >= 2")
    if max_depth < 0:
        raise ValueError("max_depth must be non-negative")
    points = np.asarray(points, dtype=np.float64)
    normals = np.asarray(normals, dtype=np.float64)
    if len(points) == 0:
        return []
    angles = np.arctan2(normals[:, 1], normals[:, 0]) % np.pi

    out: list[EdgeGaussian2D] = []

    def emit(mask):
        pts = points[mask]
        mean_angle, _ = _circular_stats_axial(angles[mask])
        normal = np.array([math.cos(mean_angle), math.sin(mean_angle)])
        if normal[0] < 0 or (normal[0] == 0 and normal[1] < 0):
            normal = -normal
        tangent = np.array([-normal[1], normal[0]])
        center = pts.mean(axis=0)
        rel = pts - center
        ext_t = max(float(np.std(rel @ tangent)), 0.5)
        ext_n = max(float(np.std(rel @ normal)), 0.5)
        out.append(EdgeGaussian2D(
            center=center, normal=normal,
            tangent_extent=max(ext_t, ext_n), normal_extent=min(ext_t, ext_n),
            support_count=int(mask.sum())))

    def visit(x0, y0, size, depth):
        mask = ((points[:, 0] >= x0) & (points[:, 0] < x0 + size)
                & (points[:, 1] >= y0) & (points[:, 1] < y0 + size))
        if not np.any(mask):
            return
        _, spread = _circular_stats_axial(angles[mask])
        if spread < angle_threshold or depth >= max_depth or size <= 1:
            emit(mask)
            return
        half = size / 2.0
        for dx, dy in ((0, 0), (half, 0), (0, half), (half, half)):
            visit(x0 + dx, y0 + dy, half, depth + 1)

    x_max = points[:, 0].max()
    y_max = points[:, 1].max()
    ny = int(math.floor(y_max / tile_size)) + 1
    nx = int(math.floor(x_max / tile_size)) + 1
    for ty in range(ny):
        for tx in range(nx):
            visit(tx * tile_size, ty * tile_size, float(tile_size), 0)
    return out


def sample_inverse_depth(u, d_min: float, d_max: float):
    """Inverse-depth warp of a uniform variate; u=0 -> d_max, u=1 -> d_min.

    Accepts a scalar or an ndarray of variates; the induced density over
    depth is proportional to 1/d^2 on [d_min, d_max].
    """
    if not (0.0 < d_min < d_max):
        raise ValueError("require 0 < d_min < d_max")
    u_arr = np.asarray(u, dtype=np.float64)
    if np.any(u_arr < 0.0) or np.any(u_arr > 1.0):
        raise ValueError("u must be in [0, 1]")
    d = 1.0 / (1.0 / d_max + u_arr * (1.0 / d_min - 1.0 / d_max))
    return float(d) if np.isscalar(u) else d


def initialize_gaussians(edge_gaussians, budget: InitBudget, K: CameraIntrinsics,
                         pose: PoseSE3, d_min: float, d_max: float,
                         rng_seed: int, opacity: float = 0.5, color: float = 0.5,
                         base_scale_px: float = 2.0,
                         random_color: float | None = None) -> GaussianCloud:
    """Lift 2D edge Gaussians to 3D and fill the rest of the budget randomly.

    Each edge Gaussian receives floor(N_edge / N_g) inverse-depth samples
    (the first `N_edge mod N_g` get one extra) back-projected along its
    viewing ray; random Gaussians are drawn uniformly over (pixel, depth)
    inside the frustum.  Edge Gaussians are anisotropic with their smallest
    axis along the back-projected edge normal; randomness is keyed per
    Gaussian index, so one entry's samples do not depend on the content of
    the other entries.

    `random_color` (default: same as `color`) sets the brightness of the
    random fill; matching it to the render background makes the fill
    photometrically invisible at initialization, so only edge Gaussians
    contribute synthesized events until optimization differentiates the fill.
    """
    if not (0.0 < d_min < d_max):
        raise ValueError("require 0 < d_min < d_max")
    if random_color is None:
        random_color = color
    edge_gaussians = list(edge_gaussians)
    n_g = len(edge_gaussians)
    n_edge = budget.n_edge if n_g > 0 else 0
    n_random = budget.n_total - n_edge
    R_pose = pose.rotation

    mus, scales, quats, opacities, colors, origins = [], [], [], [], [], []

    if n_g > 0 and n_edge > 0:
        n_d = n_edge // n_g
        leftover = n_edge - n_d * n_g
        for i, g in enumerate(edge_gaussians):
            count = n_d + (1 if i < leftover else 0)
            if count == 0:
                continue
            rng = np.random.default_rng(np.random.SeedSequence(rng_seed, spawn_key=(0, i)))
            nx, ny = g.normal
            tangent_cam = np.array([-ny, nx, 0.0])
            normal_cam = np.array([nx, ny, 0.0])
            # [tangent, optical axis, normal] is right-handed and orthonormal
            R_local = np.column_stack([tangent_cam, np.array([0.0, 0.0, 1.0]), normal_cam])
            quat = matrix_to_quat(R_pose @ R_local)
            for _ in range(count):
                d = sample_inverse_depth(float(rng.random()), d_min, d_max)
                mu = backproject(g.center, d, K, pose)
                base = base_scale_px * d / K.fx
                mus.append(mu)
                scales.append(base * np.array([
                    max(g.tangent_extent / base_scale_px, 1.0), 1.0, 0.25]))
                quats.append(quat)
                opacities.append(opacity)
                colors.append(color)
                origins.append(1)

    rng = np.random.default_rng(np.random.SeedSequence(rng_seed, spawn_key=(1,)))
    for _ in range(n_random):
        px = rng.uniform(0.0, K.width - 1.0)
        py = rng.uniform(0.0, K.height - 1.0)
        d = rng.uniform(d_min, d_max)
        mu = backproject(np.array([px, py]), d, K, pose)
        base = base_scale_px * d / K.fx
        mus.append(mu)
        scales.append(base * np.ones(3))
        quats.append(np.array([1.0, 0.0, 0.0, 0.0]))
        opacities.append(opacity)
        colors.append(random_color)
        origins.append(0)

    if not mus:
        raise ValueError("empty initialization")
    return GaussianCloud(mu=mus, scales=scales, quat=quats, opacity=opacities,
                         color=colors, origin=origins)
