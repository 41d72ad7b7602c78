"""Pose-free optimization loop: chunk trajectories, event supervision,
tracking of new chunks, and sliding-window bundle adjustment.

Each temporal chunk carries a continuous trajectory parameterized by its
boundary poses (slerp rotation, lerp translation).  Supervision samples
random sub-intervals of a chunk, accumulates the measured event map,
renders the two boundary brightness images of the interval, and compares
the synthesized log-difference against the measurement with the
edge-weighted + DSSIM objective.  Tracking optimizes a new chunk's end
pose with the scene frozen; mapping jointly adjusts all in-window boundary
poses (first start pose gauge-fixed) and the Gaussian scene.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from evsplat.config import Config
from evsplat.edges import DetectorParams, EdgeMap, detect_edges
from evsplat.events import Chunk, EventStream, accumulate, chunk_stream, sample_interval
from evsplat.geometry import (
    CameraIntrinsics,
    PoseSE3,
    interpolate_se3,
    interpolation_chain,
)
from evsplat.init3d import (
    GaussianCloud,
    InitBudget,
    edge_normals,
    extract_edge_points,
    fit_edge_gaussians,
    initialize_gaussians,
)
from evsplat.losses import total_loss_grad
from evsplat.render import rasterize_backward, rasterize_forward


@dataclass(frozen=True)
class LossWeights:
    beta: float = 2.0    # edge emphasis; w(x) = 1 + beta * M(x)
    lam: float = 0.2     # DSSIM mixing weight

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if not (0.0 <= self.lam <= 1.0):
            raise ValueError("lambda must be in [0, 1]")


@dataclass(frozen=True)
class ChunkTrajectory:
    start: PoseSE3
    end: PoseSE3
    chunk_index: int


def interpolate_pose(traj: ChunkTrajectory, alpha: float) -> PoseSE3:
    """Slerp + lerp between the chunk's boundary poses; endpoint-exact."""
    return interpolate_se3(traj.start, traj.end, alpha)


class TrackingFailure(RuntimeError):
    def __init__(self, chunk_index: int, message: str):
        super().__init__(f"tracking failed on chunk {chunk_index}: {message}")
        self.chunk_index = chunk_index


@dataclass
class SuperviseResult:
    loss: float
    loss_edge: float
    loss_dssim: float
    grad_start: np.ndarray      # (6,) tangent of T_start
    grad_end: np.ndarray        # (6,) tangent of T_end
    grad_mu: np.ndarray
    grad_scales: np.ndarray
    grad_quat: np.ndarray
    grad_opacity: np.ndarray
    grad_color: np.ndarray


def supervise_chunk(chunk: Chunk, traj: ChunkTrajectory, cloud: GaussianCloud,
                    edge_map: EdgeMap, weights: LossWeights, K: CameraIntrinsics,
                    rng: np.random.Generator, n_samples: int, dt_min: int,
                    dt_max: int, contrast_threshold: float, background: float,
                    near: float = 0.01) -> SuperviseResult:
    """Monte-Carlo event supervision of one chunk.

    Draws `n_samples` sub-intervals (start uniform in the chunk, duration
    via :func:`sample_interval`, clamped at the chunk end), and averages the
    total loss and its gradients w.r.t. the boundary-pose tangents and all
    Gaussian parameters.
    """
    if chunk.duration <= 0:
        raise ValueError("chunk has no duration")
    n = len(cloud)
    res = SuperviseResult(
        loss=0.0, loss_edge=0.0, loss_dssim=0.0,
        grad_start=np.zeros(6), grad_end=np.zeros(6),
        grad_mu=np.zeros((n, 3)), grad_scales=np.zeros((n, 3)),
        grad_quat=np.zeros((n, 4)), grad_opacity=np.zeros(n),
        grad_color=np.zeros(n))
    dur = chunk.duration
    for _ in range(n_samples):
        t = int(rng.integers(chunk.t_start, chunk.t_end))
        _, t2 = sample_interval(rng, t, dt_min, dt_max)
        t2 = min(t2, chunk.t_end)  # clamp, per contract
        measured = accumulate(chunk.events, t, t2 - t, contrast_threshold).values
        a1 = (t - chunk.t_start) / dur
        a2 = (t2 - chunk.t_start) / dur
        pose1 = interpolate_pose(traj, a1)
        pose2 = interpolate_pose(traj, a2)
        pack1 = rasterize_forward(cloud, pose1, K, background, near)
        pack2 = rasterize_forward(cloud, pose2, K, background, near)
        e_hat = np.log(pack2.image) - np.log(pack1.image)
        loss, g_ehat, l_edge, l_dssim = total_loss_grad(
            e_hat, measured, edge_map, weights.beta, weights.lam)
        g1 = rasterize_backward(pack1, -g_ehat / pack1.image)
        g2 = rasterize_backward(pack2, g_ehat / pack2.image)
        js1, je1 = interpolation_chain(traj.start, traj.end, a1)
        js2, je2 = interpolation_chain(traj.start, traj.end, a2)
        res.grad_start += js1.T @ g1.pose + js2.T @ g2.pose
        res.grad_end += je1.T @ g1.pose + je2.T @ g2.pose
        res.grad_mu += g1.mu + g2.mu
        res.grad_scales += g1.scales + g2.scales
        res.grad_quat += g1.quat + g2.quat
        res.grad_opacity += g1.opacity + g2.opacity
        res.grad_color += g1.color + g2.color
        res.loss += loss
        res.loss_edge += l_edge
        res.loss_dssim += l_dssim
    inv = 1.0 / n_samples
    res.loss *= inv
    res.loss_edge *= inv
    res.loss_dssim *= inv
    res.grad_start *= inv
    res.grad_end *= inv
    res.grad_mu *= inv
    res.grad_scales *= inv
    res.grad_quat *= inv
    res.grad_opacity *= inv
    res.grad_color *= inv
    return res


class Adam:
    """Per-key Adam with bias-corrected moments."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state: dict = {}

    def step(self, key, grad: np.ndarray, lr: float) -> np.ndarray:
        """Returns the parameter increment (already negated)."""
        grad = np.asarray(grad, dtype=np.float64)
        m, v, t = self.state.get(key, (np.zeros_like(grad), np.zeros_like(grad), 0))
        t += 1
        m = self.beta1 * m + (1 - self.beta1) * grad
        v = self.beta2 * v + (1 - self.beta2) * grad * grad
        self.state[key] = (m, v, t)
        mhat = m / (1 - self.beta1**t)
        vhat = v / (1 - self.beta2**t)
        return -lr * mhat / (np.sqrt(vhat) + self.eps)


OPACITY_MIN, OPACITY_MAX = 1e-4, 0.995
SCALE_MIN = 1e-5


def _apply_cloud_update(cloud: GaussianCloud, res: SuperviseResult, adam: Adam,
                        cfg: Config, decay: float = 1.0) -> None:
    cloud.mu += adam.step("mu", res.grad_mu, decay * cfg["loop.lr_mu"])
    cloud.scales = np.maximum(
        cloud.scales + adam.step("scales", res.grad_scales,
                                 decay * cfg["loop.lr_scales"]),
        SCALE_MIN)
    cloud.quat += adam.step("quat", res.grad_quat, decay * cfg["loop.lr_quat"])
    cloud.quat /= np.linalg.norm(cloud.quat, axis=1, keepdims=True)
    cloud.opacity = np.clip(
        cloud.opacity + adam.step("opacity", res.grad_opacity,
                                  decay * cfg["loop.lr_opacity"]),
        OPACITY_MIN, OPACITY_MAX)
    cloud.color = np.clip(
        cloud.color + adam.step("color", res.grad_color,
                                decay * cfg["loop.lr_color"]),
        0.0, 1.0)


@dataclass
class WindowState:
    """Scene plus the boundary poses of all chunks processed so far.

    Boundary pose i is shared between chunk i-1's end and chunk i's start;
    only the most recent `window_size` chunks are optimized during mapping.
    """

    scene: GaussianCloud
    boundary_times: list          # t_us of each boundary, len = n_chunks + 1
    boundary_poses: list          # PoseSE3 per boundary
    window_size: int
    scene_adam: Adam = field(default_factory=Adam)
    pose_adam: Adam = field(default_factory=Adam)

    @property
    def n_chunks(self) -> int:
        return len(self.boundary_times) - 1

    def trajectory(self, chunk_index: int) -> ChunkTrajectory:
        return ChunkTrajectory(self.boundary_poses[chunk_index],
                               self.boundary_poses[chunk_index + 1], chunk_index)

    def trajectories(self) -> list:
        return [self.trajectory(i) for i in range(self.n_chunks)]

    def export_trajectory(self):
        """(timestamp_seconds, PoseSE3) at all chunk boundaries."""
        return [(t / 1e6, p) for t, p in zip(self.boundary_times, self.boundary_poses)]


@dataclass
class TrackResult:
    trajectory: ChunkTrajectory
    failed: bool
    initial_loss: float
    final_loss: float


def _supervise_kwargs(cfg: Config, K: CameraIntrinsics):
    return dict(
        K=K, dt_min=cfg["loop.dt_min_us"], dt_max=cfg["loop.dt_max_us"],
        contrast_threshold=cfg["loop.contrast_threshold"],
        background=cfg["loop.background"], near=cfg["loop.near"],
        n_samples=cfg["loop.n_samples"])


def track_chunk(prev: WindowState, chunk: Chunk, edge_map: EdgeMap,
                cfg: Config, K: CameraIntrinsics, log_rows=None) -> TrackResult:
    """Estimate a new chunk's end pose with the scene frozen.

    The start pose is pinned to the previous chunk's end pose; the end pose
    starts from a constant-velocity extrapolation of the last relative
    motion and is refined by Adam on the supervision loss.

    `loop.cv_prior_weight` adds a soft constant-velocity motion prior,
    w * ||xi||^2 on the accumulated tangent displacement from the
    extrapolated pose.  An under-fit scene renders blurred edges, and the
    residual's self-energy term then biases the photometric optimum toward
    too little motion; the prior counters that pull for smooth motion.
    """
    if prev.n_chunks < 1:
        raise ValueError("tracking requires at least one previous chunk")
    weights = LossWeights(beta=cfg["loss.beta"], lam=cfg["loss.lambda"])
    start = prev.boundary_poses[-1]
    rel = prev.boundary_poses[-2].inverse().compose(prev.boundary_poses[-1])
    end = start.compose(rel)
    adam = Adam()
    scene = prev.scene
    kwargs = _supervise_kwargs(cfg, K)
    initial = None
    final = 0.0
    lr = cfg["loop.lr_pose"]
    for it in range(cfg["loop.tracking_iters"]):
        rng = np.random.default_rng(
            np.random.SeedSequence(cfg["seed"], spawn_key=(2, chunk.index, it)))
        traj = ChunkTrajectory(start, end, chunk.index)
        res = supervise_chunk(chunk, traj, scene, edge_map, weights,
                              rng=rng, **kwargs)
        if initial is None:
            initial = res.loss
        final = res.loss
        if log_rows is not None:
            log_rows.append((it, chunk.index, "track", res.loss_edge,
                             res.loss_dssim, res.loss))
        if res.loss > 10.0 * initial and initial > 0:
            return TrackResult(ChunkTrajectory(start, end, chunk.index),
                               failed=True, initial_loss=initial, final_loss=res.loss)
        end = end.retract(adam.step("end", res.grad_end, lr))
        lr *= cfg["loop.lr_decay"]
    return TrackResult(ChunkTrajectory(start, end, chunk.index), failed=False,
                       initial_loss=initial if initial is not None else 0.0,
                       final_loss=final)


def bundle_adjust(window: WindowState, chunks, edge_maps, cfg: Config,
                  K: CameraIntrinsics, log_rows=None, iters: int | None = None) -> WindowState:
    """Joint Adam refinement of in-window boundary poses and the scene.

    The first in-window chunk's start pose is gauge-fixed.  Mutates and
    returns `window`.
    """
    if window.n_chunks < 1:
        raise ValueError("empty window")
    weights = LossWeights(beta=cfg["loss.beta"], lam=cfg["loss.lambda"])
    lo = max(0, window.n_chunks - window.window_size)
    in_window = list(range(lo, window.n_chunks))
    free_boundaries = list(range(lo + 1, window.n_chunks + 1))
    kwargs = _supervise_kwargs(cfg, K)
    n_iters = cfg["loop.mapping_iters"] if iters is None else iters
    decay = 1.0
    for it in range(n_iters):
        total = total_edge = total_dssim = 0.0
        pose_grads = {b: np.zeros(6) for b in free_boundaries}
        agg = None
        for ci in in_window:
            rng = np.random.default_rng(
                np.random.SeedSequence(cfg["seed"], spawn_key=(3, ci, it)))
            res = supervise_chunk(chunks[ci], window.trajectory(ci), window.scene,
                                  edge_maps[ci], weights, rng=rng, **kwargs)
            total += res.loss
            total_edge += res.loss_edge
            total_dssim += res.loss_dssim
            if ci in pose_grads:
                pose_grads[ci] += res.grad_start
            if ci + 1 in pose_grads:
                pose_grads[ci + 1] += res.grad_end
            if agg is None:
                agg = res
            else:
                agg.grad_mu += res.grad_mu
                agg.grad_scales += res.grad_scales
                agg.grad_quat += res.grad_quat
                agg.grad_opacity += res.grad_opacity
                agg.grad_color += res.grad_color
        if log_rows is not None:
            log_rows.append((it, in_window[-1], "map", total_edge, total_dssim, total))
        for b in free_boundaries:
            window.boundary_poses[b] = window.boundary_poses[b].retract(
                window.pose_adam.step(("b", b), pose_grads[b],
                                      decay * cfg["loop.lr_pose"]))
        _apply_cloud_update(window.scene, agg, window.scene_adam, cfg, decay)
        decay *= cfg["loop.lr_decay"]
    return window


def chunk_event_maps(chunk: Chunk, num_maps: int, contrast_threshold: float):
    """Split a chunk into `num_maps` equal sub-intervals and accumulate each."""
    if num_maps < 2:
        raise ValueError("need at least 2 sub-maps")
    edges_us = np.linspace(chunk.t_start, chunk.t_end, num_maps + 1).astype(np.int64)
    return [accumulate(chunk.events, int(edges_us[i]),
                       int(edges_us[i + 1] - edges_us[i]), contrast_threshold)
            for i in range(num_maps)]


def detector_params_from_config(cfg: Config) -> DetectorParams:
    return DetectorParams(
        num_maps=cfg["detector.num_maps"], patch_size=cfg["detector.patch_size"],
        overlap_ratio=cfg["detector.overlap_ratio"], sigma=cfg["detector.sigma"],
        tau_percentile=cfg["detector.tau_percentile"],
        smooth_sigma=cfg["detector.smooth_sigma"],
        keep_percentile=cfg["detector.keep_percentile"],
        closing_radius=cfg["detector.closing_radius"])


def initialize_scene(edge_map: EdgeMap, cfg: Config, K: CameraIntrinsics,
                     pose: PoseSE3 | None = None) -> GaussianCloud:
    """Edge-guided scene initialization from a detected edge map."""
    if pose is None:
        pose = PoseSE3.identity()
    budget = InitBudget(n_total=cfg["init.n_total"], r_edge=cfg["init.r_edge"])
    points = extract_edge_points(edge_map, cfg["init.confidence_min"])
    gaussians2d = []
    k = cfg["init.knn"]
    if budget.n_edge > 0 and len(points) >= k + 1:
        normals, _ = edge_normals(points, k)
        gaussians2d = fit_edge_gaussians(
            points, normals, cfg["init.tile_size"], cfg["init.angle_threshold"],
            cfg["init.max_depth"])
    return initialize_gaussians(
        gaussians2d, budget, K, pose, cfg["init.d_min"], cfg["init.d_max"],
        rng_seed=cfg["seed"], opacity=cfg["init.opacity"], color=cfg["init.color"],
        base_scale_px=cfg["init.base_scale_px"],
        random_color=cfg["loop.background"])


def bootstrap_window(chunks, edge_maps, cfg: Config,
                     K: CameraIntrinsics, log_rows=None) -> WindowState:
    """Discover the first chunk's motion with a multi-hypothesis probe.

    Zero motion is a spurious stationary point of the supervision loss: an
    all-identity chunk trajectory synthesizes an all-zero event map whose
    scene gradients cancel exactly, so joint optimization started from
    identity stalls in a no-motion minimum.  Each end-pose hypothesis —
    identity plus ±`loop.bootstrap_step` along each camera translation
    axis — is refined with a short joint optimization from a fresh scene
    initialization; the hypothesis with the lowest loss on a common sample
    set wins and receives the remaining bootstrap budget.
    """
    first = chunks[0]
    weights = LossWeights(beta=cfg["loss.beta"], lam=cfg["loss.lambda"])
    kwargs = _supervise_kwargs(cfg, K)
    step = cfg["loop.bootstrap_step"]
    hypotheses = [np.zeros(6)]
    if step > 0:
        for axis in range(3):
            for sign in (1.0, -1.0):
                xi = np.zeros(6)
                xi[3 + axis] = sign * step
                hypotheses.append(xi)
    best_loss, best_window = np.inf, None
    for xi in hypotheses:
        window = WindowState(
            scene=initialize_scene(edge_maps[0], cfg, K),
            boundary_times=[first.t_start, first.t_end],
            boundary_poses=[PoseSE3.identity(), PoseSE3.identity().retract(xi)],
            window_size=cfg["loop.window"])
        bundle_adjust(window, chunks, edge_maps, cfg, K,
                      iters=cfg["loop.bootstrap_probe_iters"])
        rng = np.random.default_rng(
            np.random.SeedSequence(cfg["seed"], spawn_key=(4,)))
        res = supervise_chunk(first, window.trajectory(0), window.scene,
                              edge_maps[0], weights, rng=rng, **kwargs)
        if res.loss < best_loss:
            best_loss, best_window = res.loss, window
    bundle_adjust(best_window, chunks, edge_maps, cfg, K, log_rows=log_rows,
                  iters=cfg["loop.bootstrap_iters"])
    return best_window


@dataclass
class PipelineResult:
    scene: GaussianCloud
    trajectory: list           # (timestamp_seconds, PoseSE3)
    edge_maps: list            # EdgeMap per chunk
    log_rows: list             # (iter, chunk, phase, loss_edge, loss_dssim, loss)


def run_pipeline(stream: EventStream, K: CameraIntrinsics, cfg: Config) -> PipelineResult:
    """Full pose-free reconstruction from an event stream.

    Chunks the stream, detects per-chunk edge maps, initializes the scene
    from the first chunk, then alternates tracking and sliding-window
    bundle adjustment.  Raises :class:`TrackingFailure` with the failing
    chunk index on divergence.
    """
    if len(stream) == 0:
        raise ValueError("empty event stream")
    chunks = chunk_stream(stream, cfg["loop.chunk_duration_us"])
    det = detector_params_from_config(cfg)
    ct = cfg["loop.contrast_threshold"]
    edge_maps = [detect_edges(chunk_event_maps(c, det.num_maps, ct), det)
                 for c in chunks]
    log_rows: list = []

    window = bootstrap_window(chunks, edge_maps, cfg, K, log_rows=log_rows)

    for chunk in chunks[1:]:
        result = track_chunk(window, chunk, edge_maps[chunk.index], cfg, K,
                             log_rows=log_rows)
        if result.failed:
            raise TrackingFailure(
                chunk.index,
                f"loss diverged ({result.initial_loss:.3g} -> {result.final_loss:.3g})")
        window.boundary_times.append(chunk.t_end)
        window.boundary_poses.append(result.trajectory.end)
        bundle_adjust(window, chunks, edge_maps, cfg, K, log_rows=log_rows)

    return PipelineResult(scene=window.scene,
                          trajectory=window.export_trajectory(),
                          edge_maps=edge_maps, log_rows=log_rows)
