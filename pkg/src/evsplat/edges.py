"""Patch-based temporal-coherence edge detection.

A sequence of consecutive event maps is turned into a normalized edge
confidence map: smoothed temporal differences, per-patch spatial variance
(taking the max over consecutive pairs), percentile-adaptive patch
classification, pixel-wise max aggregation, then smoothing / thresholding /
morphological closing and max-normalization.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import ndimage

from evsplat.events import EventMap
from evsplat.simulator import disc_structure


@dataclass(frozen=True)
class DetectorParams:
    num_maps: int = 5            # T consecutive event maps
    patch_size: int = 8          # p
    overlap_ratio: float = 0.5   # rho in [0, 1)
    sigma: float = 1.0           # Gaussian window of the temporal difference
    tau_percentile: float = 80.0  # adaptive patch-contrast threshold
    smooth_sigma: float = 2.0    # post-processing smoothing
    keep_percentile: float = 65.0
    closing_radius: int = 2

    def __post_init__(self):
        if self.num_maps < 2:
            raise ValueError("need at least 2 event maps")
        if self.patch_size < 2:
            raise ValueError("patch_size must be >= 2")
        if not (0.0 <= self.overlap_ratio < 1.0):
            raise ValueError("overlap_ratio must be in [0, 1)")
        if self.sigma <= 0 or self.smooth_sigma <= 0:
            raise ValueError("sigmas must be positive")
        for p in (self.tau_percentile, self.keep_percentile):
            if not (0.0 < p < 100.0):
                raise ValueError("percentiles must be in (0, 100)")
        if self.closing_radius < 0:
            raise ValueError("closing_radius must be non-negative")


@dataclass(frozen=True)
class PatchGrid:
    """Stride-regular patch anchors with clamped last row/column so every
    pixel is covered by at least one patch."""

    width: int
    height: int
    patch_size: int
    overlap_ratio: float

    @property
    def stride(self) -> int:
        return max(1, round(self.patch_size * (1.0 - self.overlap_ratio)))

    def anchors(self):
        def axis_anchors(extent):
            p = self.patch_size
            if extent <= p:
                return [0]
            pos = list(range(0, extent - p, self.stride))
            pos.append(extent - p)
            return pos
        return [(ax, ay) for ay in axis_anchors(self.height)
                for ax in axis_anchors(self.width)]

    def region(self, anchor):
        ax, ay = anchor
        p = self.patch_size
        return (slice(ay, min(ay + p, self.height)),
                slice(ax, min(ax + p, self.width)))


@dataclass(frozen=True)
class EdgeMap:
    """Normalized edge confidence in [0, 1] plus detector provenance."""

    values: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.min() < 0.0 or v.max() > 1.0:
            raise ValueError("edge map values must be in [0, 1]")
        object.__setattr__(self, "values", v)


def gaussian_kernel_1d(sigma: float) -> np.ndarray:
    """Normalized discrete Gaussian, radius ceil(3*sigma)."""
    r = int(np.ceil(3.0 * sigma))
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_filter(values: np.ndarray, sigma: float) -> np.ndarray:
    """Separable 2D Gaussian smoothing with reflection borders."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    values = np.asarray(values, dtype=np.float64)
    k = gaussian_kernel_1d(sigma)
    out = ndimage.correlate1d(values, k, axis=0, mode="reflect")
    return ndimage.correlate1d(out, k, axis=1, mode="reflect")


def temporal_difference(prev: EventMap | np.ndarray, curr: EventMap | np.ndarray,
                        sigma: float) -> np.ndarray:
    """|G_sigma * E_curr - G_sigma * E_prev|, element-wise."""
    a = prev.values if isinstance(prev, EventMap) else np.asarray(prev, dtype=np.float64)
    b = curr.values if isinstance(curr, EventMap) else np.asarray(curr, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("event map resolution mismatch")
    return np.abs(gaussian_filter(b, sigma) - gaussian_filter(a, sigma))


def patch_contrast(d_sequence, grid: PatchGrid) -> np.ndarray:
    """Per-patch max (over difference grids) of the spatial population
    variance of the grid restricted to the patch."""
    d_sequence = [np.asarray(d, dtype=np.float64) for d in d_sequence]
    if not d_sequence:
        raise ValueError("need at least one difference grid")
    anchors = grid.anchors()
    contrasts = np.zeros(len(anchors))
    for d in d_sequence:
        if d.shape != (grid.height, grid.width):
            raise ValueError("difference grid does not match patch grid resolution")
        for i, anchor in enumerate(anchors):
            patch = d[grid.region(anchor)]
            contrasts[i] = max(contrasts[i], float(np.var(patch)))
    return contrasts


def adaptive_threshold(contrasts, percentile: float) -> float:
    """Linear-interpolated percentile of the contrast distribution."""
    contrasts = np.asarray(contrasts, dtype=np.float64)
    if contrasts.size == 0:
        raise ValueError("empty contrast list")
    return float(np.percentile(contrasts, percentile))


def aggregate_raw(classified, resolution) -> np.ndarray:
    """Pixel-wise max of classified patch strengths; zero where uncovered.

    `classified` is a list of ((row_slice, col_slice), strength) pairs.
    """
    width, height = resolution
    m_raw = np.zeros((height, width))
    for region, strength in classified:
        if strength < 0:
            raise ValueError("patch strengths must be non-negative")
        np.maximum(m_raw[region], strength, out=m_raw[region])
    return m_raw


def postprocess(m_raw: np.ndarray, smooth_sigma: float, keep_percentile: float,
                closing_radius: int, provenance: dict | None = None) -> EdgeMap:
    """Smooth, keep strong responses, close gaps, and max-normalize."""
    m_raw = np.asarray(m_raw, dtype=np.float64)
    if not np.any(m_raw > 0):
        return EdgeMap(np.zeros_like(m_raw), provenance or {})
    smoothed = gaussian_filter(m_raw, smooth_sigma)
    nonzero = smoothed[smoothed > 0]
    thresh = np.percentile(nonzero, keep_percentile)
    support = smoothed >= thresh
    if closing_radius > 0:
        support = ndimage.binary_closing(
            support, structure=disc_structure(closing_radius))
    kept = np.where(support, smoothed, 0.0)
    peak = kept.max()
    if peak > 0:
        kept = kept / peak
    return EdgeMap(kept, provenance or {})


def detect_edges(maps, params: DetectorParams = DetectorParams()) -> EdgeMap:
    """End-to-end detection over T >= 2 consecutive event maps."""
    if len(maps) < 2:
        raise ValueError("need at least 2 event maps")
    grids = [m.values if isinstance(m, EventMap) else np.asarray(m, dtype=np.float64)
             for m in maps]
    h, w = grids[0].shape
    diffs = [temporal_difference(grids[i - 1], grids[i], params.sigma)
             for i in range(1, len(grids))]
    grid = PatchGrid(width=w, height=h, patch_size=params.patch_size,
                     overlap_ratio=params.overlap_ratio)
    contrasts = patch_contrast(diffs, grid)
    tau = adaptive_threshold(contrasts, params.tau_percentile)
    classified = [(grid.region(anchor), c)
                  for anchor, c in zip(grid.anchors(), contrasts) if c > tau]
    m_raw = aggregate_raw(classified, (w, h))
    provenance = dict(asdict(params), tau=tau, resolution=(w, h))
    return postprocess(m_raw, params.smooth_sigma, params.keep_percentile,
                       params.closing_radius, provenance)
