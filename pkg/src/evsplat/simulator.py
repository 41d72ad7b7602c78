"""Synthetic event-camera simulator and ground-truth oracle.

Renders simple grayscale scenes (textured planes and thin 3D line segments)
under known trajectories, emits ideal events via a per-pixel
threshold-crossing model with residual carry-over, optionally injects
uniform background noise, and exposes ground-truth edge masks, poses and
brightness images for the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from evsplat.events import EventStream, merge_streams
from evsplat.geometry import CameraIntrinsics, PoseSE3, interpolate_se3, matrix_to_quat


# ---------------------------------------------------------------------------
# scene description
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Albedo:
    """Grayscale albedo pattern on a plane's (u, v) chart.

    kind: 'constant' (params: g), 'checker' (g1, g2, period),
    'grid' (g_bg, g_line, pitch, line_width), 'split' (g1, g2; split at u=0).
    Values in (0, 1].
    """

    kind: str
    params: tuple

    def __post_init__(self):
        kinds = {"constant": 1, "checker": 3, "grid": 4, "split": 2}
        if self.kind not in kinds:
            raise ValueError(f"unknown albedo kind {self.kind!r}")
        if len(self.params) != kinds[self.kind]:
            raise ValueError(f"albedo {self.kind} needs {kinds[self.kind]} parameters")
        grays = self.params[:2] if self.kind != "constant" else self.params[:1]
        for g in grays:
            if not (0.0 < g <= 1.0):
                raise ValueError("albedo gray values must be in (0, 1]")

    def eval(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        if self.kind == "constant":
            return np.full_like(u, self.params[0])
        if self.kind == "split":
            g1, g2 = self.params
            return np.where(u < 0.0, g1, g2)
        if self.kind == "checker":
            g1, g2, period = self.params
            par = (np.floor(u / period) + np.floor(v / period)) % 2
            return np.where(par == 0, g1, g2)
        g_bg, g_line, pitch, width = self.params
        du = np.abs(u - pitch * np.round(u / pitch))
        dv = np.abs(v - pitch * np.round(v / pitch))
        on_line = (du < width / 2.0) | (dv < width / 2.0)
        return np.where(on_line, g_line, g_bg)

    def discontinuity_lines(self, hu: float, hv: float):
        """(u, v)-chart line segments ((u0,v0),(u1,v1)) where albedo jumps."""
        lines = []
        if self.kind == "split":
            lines.append(((0.0, -hv), (0.0, hv)))
        elif self.kind == "checker":
            period = self.params[2]
            k = 1
            while k * period < hu:
                lines.append(((k * period, -hv), (k * period, hv)))
                lines.append(((-k * period, -hv), (-k * period, hv)))
                k += 1
            if 0.0 < hu:
                lines.append(((0.0, -hv), (0.0, hv)))
            k = 1
            while k * period < hv:
                lines.append(((-hu, k * period), (hu, k * period)))
                lines.append(((-hu, -k * period), (hu, -k * period)))
                k += 1
            lines.append(((-hu, 0.0), (hu, 0.0)))
        elif self.kind == "grid":
            _, _, pitch, width = self.params
            k = 0
            while k * pitch - width / 2.0 < hu:
                for c in ({k * pitch} | {-k * pitch}):
                    for off in (-width / 2.0, width / 2.0):
                        if abs(c + off) < hu:
                            lines.append(((c + off, -hv), (c + off, hv)))
                k += 1
            k = 0
            while k * pitch - width / 2.0 < hv:
                for c in ({k * pitch} | {-k * pitch}):
                    for off in (-width / 2.0, width / 2.0):
                        if abs(c + off) < hv:
                            lines.append(((-hu, c + off), (hu, c + off)))
                k += 1
        return lines


@dataclass(frozen=True)
class TexturedPlane:
    """Finite rectangle: center + orthonormal in-plane basis (e_u, e_v)."""

    center: np.ndarray
    e_u: np.ndarray
    e_v: np.ndarray
    half_extent_u: float
    half_extent_v: float
    albedo: Albedo

    def __post_init__(self):
        for name in ("center", "e_u", "e_v"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if abs(np.dot(self.e_u, self.e_v)) > 1e-9:
            raise ValueError("plane basis must be orthogonal")
        if abs(np.linalg.norm(self.e_u) - 1) > 1e-9 or abs(np.linalg.norm(self.e_v) - 1) > 1e-9:
            raise ValueError("plane basis must be unit-norm")
        if self.half_extent_u <= 0 or self.half_extent_v <= 0:
            raise ValueError("plane extents must be positive")

    @property
    def normal(self) -> np.ndarray:
        return np.cross(self.e_u, self.e_v)

    def boundary_segments(self):
        c, eu, ev = self.center, self.e_u, self.e_v
        hu, hv = self.half_extent_u, self.half_extent_v
        corners = [c + su * hu * eu + sv * hv * ev
                   for su, sv in ((-1, -1), (1, -1), (1, 1), (-1, 1))]
        return [(corners[i], corners[(i + 1) % 4]) for i in range(4)]

    def discontinuity_segments(self):
        segs = []
        for (u0, v0), (u1, v1) in self.albedo.discontinuity_lines(
                self.half_extent_u, self.half_extent_v):
            p0 = self.center + u0 * self.e_u + v0 * self.e_v
            p1 = self.center + u1 * self.e_u + v1 * self.e_v
            segs.append((p0, p1))
        return segs


@dataclass(frozen=True)
class LineSegment3D:
    """Thin cylinder rendered as a constant-albedo stroke."""

    p0: np.ndarray
    p1: np.ndarray
    radius: float
    gray: float

    def __post_init__(self):
        object.__setattr__(self, "p0", np.asarray(self.p0, dtype=np.float64))
        object.__setattr__(self, "p1", np.asarray(self.p1, dtype=np.float64))
        if self.radius <= 0:
            raise ValueError("segment radius must be positive")
        if not (0.0 < self.gray <= 1.0):
            raise ValueError("segment gray must be in (0, 1]")


@dataclass(frozen=True)
class SyntheticScene:
    primitives: tuple
    background: float = 0.4
    bbox_min: np.ndarray = field(default_factory=lambda: np.array([-10.0, -10.0, -10.0]))
    bbox_max: np.ndarray = field(default_factory=lambda: np.array([10.0, 10.0, 10.0]))

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))
        object.__setattr__(self, "bbox_min", np.asarray(self.bbox_min, dtype=np.float64))
        object.__setattr__(self, "bbox_max", np.asarray(self.bbox_max, dtype=np.float64))
        if not (0.0 < self.background <= 1.0):
            raise ValueError("background intensity must be in (0, 1]")
        for prim in self.primitives:
            pts = []
            if isinstance(prim, TexturedPlane):
                pts = [p for seg in prim.boundary_segments() for p in seg]
            elif isinstance(prim, LineSegment3D):
                pts = [prim.p0, prim.p1]
            else:
                raise TypeError(f"unsupported primitive {type(prim).__name__}")
            for p in pts:
                if np.any(p < self.bbox_min - 1e-9) or np.any(p > self.bbox_max + 1e-9):
                    raise ValueError("primitive outside declared bounding box")


# ---------------------------------------------------------------------------
# brightness rendering
# ---------------------------------------------------------------------------

_NEAR = 1e-3


def _pixel_rays_world(pose: PoseSE3, K: CameraIntrinsics):
    xs = np.arange(K.width, dtype=np.float64)
    ys = np.arange(K.height, dtype=np.float64)
    px, py = np.meshgrid(xs, ys)
    rays_cam = K.ray(np.stack([px, py], axis=-1))  # (H, W, 3), unit z
    dirs = rays_cam @ pose.rotation.T
    return pose.trans, dirs  # origin (3,), dirs (H, W, 3)


def render_brightness(scene: SyntheticScene, pose: PoseSE3, K: CameraIntrinsics,
                      return_depth: bool = False):
    """Ray-cast grayscale image in (0, 1] with z-buffer occlusion.

    Depth is the camera-frame z of the hit (the ray direction has unit
    camera z, so the ray parameter equals the depth).
    """
    origin, dirs = _pixel_rays_world(pose, K)
    image = np.full((K.height, K.width), scene.background, dtype=np.float64)
    zbuf = np.full((K.height, K.width), np.inf)
    for prim in scene.primitives:
        if isinstance(prim, TexturedPlane):
            _raycast_plane(prim, origin, dirs, image, zbuf)
        else:
            _raycast_segment(prim, origin, dirs, image, zbuf)
    if return_depth:
        return image, zbuf
    return image


def _raycast_plane(plane: TexturedPlane, origin, dirs, image, zbuf):
    n = plane.normal
    denom = dirs @ n
    num = np.dot(plane.center - origin, n)
    if abs(num) < 1e-12:
        raise ValueError("camera center lies inside a plane primitive")
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(np.abs(denom) > 1e-12, num / denom, np.inf)
    hit = s > _NEAR
    pts = origin + s[..., None] * dirs
    rel = pts - plane.center
    u = rel @ plane.e_u
    v = rel @ plane.e_v
    hit &= (np.abs(u) <= plane.half_extent_u) & (np.abs(v) <= plane.half_extent_v)
    hit &= s < zbuf
    if np.any(hit):
        image[hit] = plane.albedo.eval(u[hit], v[hit])
        zbuf[hit] = s[hit]


def _raycast_segment(seg: LineSegment3D, origin, dirs, image, zbuf):
    a = seg.p0 - origin
    b = seg.p1 - seg.p0
    if np.linalg.norm(np.cross(a, b)) / max(np.linalg.norm(b), 1e-12) < seg.radius \
            and 0.0 <= -np.dot(a, b) / np.dot(b, b) <= 1.0:
        raise ValueError("camera center lies inside a segment primitive")
    # closest approach between ray o + s*d and segment p0 + u*b, u clamped
    dd = np.einsum("hwc,hwc->hw", dirs, dirs)
    db = dirs @ b
    da = dirs @ a
    bb = float(np.dot(b, b))
    ab = float(np.dot(a, b))
    denom = dd * bb - db * db
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(denom > 1e-12, (da * db - ab * dd) / denom, 0.0)
    u = np.clip(u, 0.0, 1.0)
    # optimal ray parameter for the clamped u: s = d.(a + u b)/|d|^2
    s = (da + u * db) / dd
    pts_seg = seg.p0 + u[..., None] * b[None, None, :]
    pts_ray = origin + s[..., None] * dirs
    dist = np.linalg.norm(pts_ray - pts_seg, axis=-1)
    hit = (dist < seg.radius) & (s > _NEAR) & (s < zbuf)
    if np.any(hit):
        image[hit] = seg.gray
        zbuf[hit] = s[hit]


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

def pose_at(trajectory, t: float) -> PoseSE3:
    """Piecewise slerp/lerp through a list of (t_us, PoseSE3) samples."""
    times = [s[0] for s in trajectory]
    if t <= times[0]:
        return trajectory[0][1]
    if t >= times[-1]:
        return trajectory[-1][1]
    i = int(np.searchsorted(times, t, side="right")) - 1
    t0, p0 = trajectory[i]
    t1, p1 = trajectory[i + 1]
    alpha = (t - t0) / (t1 - t0)
    return interpolate_se3(p0, p1, float(alpha))


def look_at_pose(position, target, up=(0.0, 1.0, 0.0)) -> PoseSE3:
    """Camera at `position` with +z toward `target` (y down-ish per `up`)."""
    position = np.asarray(position, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - position
    fwd = fwd / np.linalg.norm(fwd)
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(up, fwd)
    nr = np.linalg.norm(right)
    if nr < 1e-9:
        raise ValueError("up vector parallel to view direction")
    right /= nr
    down = np.cross(fwd, right)
    R = np.column_stack([right, down, fwd])  # camera axes in world frame
    return PoseSE3(matrix_to_quat(R), position)


# ---------------------------------------------------------------------------
# ideal event generation
# ---------------------------------------------------------------------------

def generate_ideal_events(scene: SyntheticScene, trajectory, K: CameraIntrinsics,
                          contrast_threshold: float, frame_dt: int) -> EventStream:
    """Per-pixel threshold-crossing event generation with residual carry.

    An event of polarity sign(d log I) fires each time the accumulated
    log-brightness change since the pixel's last event crosses a multiple of
    the contrast threshold.  Crossing times are linearly interpolated inside
    each frame step; timestamps are rounded to integer microseconds.
    """
    if len(trajectory) < 2:
        raise ValueError("trajectory needs at least 2 samples")
    if contrast_threshold <= 0:
        raise ValueError("contrast_threshold must be positive")
    if frame_dt <= 0:
        raise ValueError("frame_dt must be positive")
    t0, t1 = int(trajectory[0][0]), int(trajectory[-1][0])
    times = list(range(t0, t1, int(frame_dt)))
    times.append(t1)
    C = float(contrast_threshold)
    eps = 1e-9

    log_prev = np.log(render_brightness(scene, pose_at(trajectory, times[0]), K))
    base = log_prev.copy()
    ts_out, xs_out, ys_out, ps_out = [], [], [], []
    for k in range(1, len(times)):
        t_lo, t_hi = times[k - 1], times[k]
        log_next = np.log(render_brightness(scene, pose_at(trajectory, t_hi), K))
        delta = log_next - base
        counts = np.floor(np.abs(delta) / C + eps).astype(np.int64)
        sel = counts > 0
        if np.any(sel):
            yy, xx = np.nonzero(sel)
            n = counts[sel]
            sign = np.sign(delta[sel]).astype(np.int8)
            rep_y = np.repeat(yy, n)
            rep_x = np.repeat(xx, n)
            rep_sign = np.repeat(sign, n)
            # crossing index j = 1..n per pixel
            j = np.concatenate([np.arange(1, ni + 1) for ni in n])
            rep_base = np.repeat(base[sel], n)
            rep_cur = np.repeat(log_prev[sel], n)
            rep_next = np.repeat(log_next[sel], n)
            target = rep_base + rep_sign * j * C
            denom = rep_next - rep_cur
            frac = np.where(np.abs(denom) > 1e-15, (target - rep_cur) / denom, 0.5)
            frac = np.clip(frac, 0.0, 1.0)
            t_ev = np.minimum(np.round(t_lo + frac * (t_hi - t_lo)).astype(np.int64),
                              t_hi - 1)
            ts_out.append(t_ev)
            xs_out.append(rep_x)
            ys_out.append(rep_y)
            ps_out.append(rep_sign)
            base[sel] += sign * n * C
        log_prev = log_next

    if ts_out:
        t = np.concatenate(ts_out)
        x = np.concatenate(xs_out)
        y = np.concatenate(ys_out)
        p = np.concatenate(ps_out)
    else:
        t = np.array([], dtype=np.int64)
        x = y = np.array([], dtype=np.int32)
        p = np.array([], dtype=np.int8)
    order = np.lexsort((p, x, y, t))
    return EventStream(t[order], x[order], y[order], p[order], K.width, K.height,
                       t_start=t0, t_end=t1)


def inject_noise(stream: EventStream, noise_rate: float,
                 rng: np.random.Generator) -> EventStream:
    """Add spatio-temporally uniform random-polarity events.

    `noise_rate` is events per pixel per second; the total count is a
    Poisson draw at that rate over the stream's span and resolution.
    """
    if noise_rate < 0:
        raise ValueError("noise_rate must be non-negative")
    if noise_rate == 0:
        return stream
    span0, span1 = stream.time_span()
    if span0 is None:
        raise ValueError("stream has no time span for noise injection")
    span_s = (span1 - span0) / 1e6
    expected = noise_rate * span_s * stream.width * stream.height
    n = int(rng.poisson(expected))
    t = np.sort(rng.integers(span0, span1, size=n))
    x = rng.integers(0, stream.width, size=n)
    y = rng.integers(0, stream.height, size=n)
    p = rng.choice(np.array([-1, 1], dtype=np.int8), size=n)
    noise = EventStream(t, x, y, p, stream.width, stream.height,
                        t_start=span0, t_end=span1)
    return merge_streams(stream, noise)


# ---------------------------------------------------------------------------
# ground-truth edge masks
# ---------------------------------------------------------------------------

def disc_structure(radius: int) -> np.ndarray:
    """Boolean disc of the given pixel radius (Euclidean)."""
    r = int(radius)
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return (xx * xx + yy * yy) <= r * r


def ground_truth_edge_mask(scene: SyntheticScene, pose: PoseSE3, K: CameraIntrinsics,
                           dilation_px: int = 0) -> np.ndarray:
    """Pixels within `dilation_px` of a projected albedo discontinuity or
    primitive silhouette, occlusion-tested against the scene z-buffer."""
    if dilation_px < 0:
        raise ValueError("dilation_px must be non-negative")
    _, zbuf = render_brightness(scene, pose, K, return_depth=True)
    mask = np.zeros((K.height, K.width), dtype=bool)
    segs = []
    for prim in scene.primitives:
        if isinstance(prim, TexturedPlane):
            for seg in prim.boundary_segments():
                segs.append((*seg, 1e-3))
            for seg in prim.discontinuity_segments():
                segs.append((*seg, 1e-3))
        else:
            # a stroke's visible surface is nearer than its axis by its radius
            segs.append((prim.p0, prim.p1, prim.radius + 1e-3))
    n_samples = 4 * max(K.width, K.height)
    for p0, p1, tol in segs:
        pts = np.linspace(p0, p1, n_samples)
        cam = pose.apply_inverse(pts)
        vis = cam[:, 2] > _NEAR
        if not np.any(vis):
            continue
        pix = K.project(cam[vis])
        depth = cam[vis, 2]
        xi = np.round(pix[:, 0]).astype(int)
        yi = np.round(pix[:, 1]).astype(int)
        inb = (xi >= 0) & (xi < K.width) & (yi >= 0) & (yi < K.height)
        xi, yi, depth = xi[inb], yi[inb], depth[inb]
        front = depth <= zbuf[yi, xi] + tol
        mask[yi[front], xi[front]] = True
    if dilation_px > 0:
        mask = ndimage.binary_dilation(mask, structure=disc_structure(dilation_px))
    return mask


# ---------------------------------------------------------------------------
# reference scenes and trajectories
# ---------------------------------------------------------------------------

def default_intrinsics(width: int = 64, height: int = 64, fov_deg: float = 60.0) -> CameraIntrinsics:
    f = width / (2.0 * math.tan(math.radians(fov_deg) / 2.0))
    return CameraIntrinsics(fx=f, fy=f, cx=width / 2.0, cy=height / 2.0,
                            width=width, height=height)


def make_reference_scene(name: str) -> SyntheticScene:
    """Reference scenes used by the verification suite.

    - 'single_line': one dark vertical stroke in front of a uniform backdrop
    - 'grid': a plane carrying a grid line pattern
    - 'plane_boundary': a two-tone split plane (one straight contrast edge)
    - 'line_orbit': strokes at several depths and orientations; the spread
      in depth breaks the planar pose ambiguity, so camera motion is fully
      observable from the event stream (used by the end-to-end sequence)
    """
    backdrop = TexturedPlane(
        center=[0.0, 0.0, 4.0], e_u=[1.0, 0.0, 0.0], e_v=[0.0, 1.0, 0.0],
        half_extent_u=6.0, half_extent_v=6.0,
        albedo=Albedo("constant", (0.45,)))
    if name == "single_line":
        prims = [
            LineSegment3D(p0=[0.0, -0.8, 2.0], p1=[0.0, 0.8, 2.0],
                          radius=0.025, gray=0.08),
            backdrop,
        ]
    elif name == "grid":
        prims = [
            TexturedPlane(
                center=[0.0, 0.0, 2.0], e_u=[1.0, 0.0, 0.0], e_v=[0.0, 1.0, 0.0],
                half_extent_u=0.35, half_extent_v=0.35,
                albedo=Albedo("grid", (0.7, 0.1, 0.35, 0.06))),
            backdrop,
        ]
    elif name == "line_orbit":
        prims = [
            LineSegment3D(p0=[0.0, -0.7, 2.0], p1=[0.0, 0.7, 2.0],
                          radius=0.025, gray=0.08),
            LineSegment3D(p0=[-0.7, -0.25, 2.6], p1=[0.7, -0.25, 2.6],
                          radius=0.03, gray=0.1),
            LineSegment3D(p0=[-0.5, 0.6, 1.5], p1=[0.4, -0.35, 1.7],
                          radius=0.022, gray=0.05),
            LineSegment3D(p0=[0.45, -0.6, 3.0], p1=[0.5, 0.65, 3.1],
                          radius=0.03, gray=0.12),
            backdrop,
        ]
    elif name == "plane_boundary":
        prims = [
            TexturedPlane(
                center=[0.0, 0.0, 2.0], e_u=[1.0, 0.0, 0.0], e_v=[0.0, 1.0, 0.0],
                half_extent_u=3.0, half_extent_v=3.0,
                albedo=Albedo("split", (0.15, 0.75))),
        ]
    else:
        raise ValueError(f"unknown reference scene {name!r}")
    return SyntheticScene(primitives=prims, background=0.4,
                          bbox_min=[-8.0, -8.0, -1.0], bbox_max=[8.0, 8.0, 8.0])


def make_orbit_trajectory(duration_us: int, n_keys: int = 33,
                          radius: float = 1.0, arc_deg: float = 50.0,
                          target=(0.0, 0.0, 8.0), orbit_center=(0.0, 0.0, 0.0)):
    """Constant-speed horizontal arc, camera fixating `target`.

    The camera moves on a circle of the given radius around `orbit_center`
    (in the z=const plane of that center), sweeping `arc_deg` degrees at
    constant angular speed.  Returns a list of (t_us, PoseSE3).

    The default fixation point lies well behind the reference scene content
    (which sits around z = 2), so nearby structure sweeps across the image
    with parallax instead of staying pinned at the fixation pixel.
    """
    target = np.asarray(target, dtype=np.float64)
    center = np.asarray(orbit_center, dtype=np.float64)
    half = math.radians(arc_deg) / 2.0
    traj = []
    for i in range(n_keys):
        a = i / (n_keys - 1)
        ang = -half + a * 2 * half
        pos = center + radius * np.array([math.sin(ang), 0.0, -(1.0 - math.cos(ang))])
        traj.append((int(round(a * duration_us)), look_at_pose(pos, target)))
    return traj


# ---------------------------------------------------------------------------
# scene files
# ---------------------------------------------------------------------------

def write_scene_file(path, scene: SyntheticScene) -> None:
    def fmt(v):
        return " ".join(f"{x:.9g}" for x in np.atleast_1d(v))
    with open(path, "w") as f:
        f.write(f"background = {scene.background:.9g}\n")
        f.write(f"bbox_min = {fmt(scene.bbox_min)}\n")
        f.write(f"bbox_max = {fmt(scene.bbox_max)}\n")
        for prim in scene.primitives:
            if isinstance(prim, TexturedPlane):
                f.write("\n[plane]\n")
                f.write(f"center = {fmt(prim.center)}\n")
                f.write(f"e_u = {fmt(prim.e_u)}\n")
                f.write(f"e_v = {fmt(prim.e_v)}\n")
                f.write(f"half_extent = {prim.half_extent_u:.9g} {prim.half_extent_v:.9g}\n")
                f.write(f"albedo = {prim.albedo.kind} {fmt(prim.albedo.params)}\n")
            else:
                f.write("\n[segment]\n")
                f.write(f"p0 = {fmt(prim.p0)}\n")
                f.write(f"p1 = {fmt(prim.p1)}\n")
                f.write(f"radius = {prim.radius:.9g}\n")
                f.write(f"gray = {prim.gray:.9g}\n")


def read_scene_file(path) -> SyntheticScene:
    header = {}
    blocks = []
    current = None
    with open(path) as f:
        for raw in f:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                current = {"__kind__": line[1:-1]}
                blocks.append(current)
                continue
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            (current if current is not None else header)[key] = value

    def vec(s):
        return np.array([float(v) for v in s.split()])

    prims = []
    for b in blocks:
        kind = b.pop("__kind__")
        if kind == "plane":
            alb = b["albedo"].split()
            prims.append(TexturedPlane(
                center=vec(b["center"]), e_u=vec(b["e_u"]), e_v=vec(b["e_v"]),
                half_extent_u=float(b["half_extent"].split()[0]),
                half_extent_v=float(b["half_extent"].split()[1]),
                albedo=Albedo(alb[0], tuple(float(v) for v in alb[1:]))))
        elif kind == "segment":
            prims.append(LineSegment3D(
                p0=vec(b["p0"]), p1=vec(b["p1"]),
                radius=float(b["radius"]), gray=float(b["gray"])))
        else:
            raise ValueError(f"unknown scene block [{kind}]")
    return SyntheticScene(
        primitives=prims,
        background=float(header.get("background", 0.4)),
        bbox_min=vec(header["bbox_min"]) if "bbox_min" in header else np.full(3, -10.0),
        bbox_max=vec(header["bbox_max"]) if "bbox_max" in header else np.full(3, 10.0))
