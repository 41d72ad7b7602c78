"""Edge-weighted reconstruction loss and structural (DSSIM) loss.

The SSIM kernel here is the single shared implementation used both as the
training loss (via :func:`dssim_loss`) and as the evaluation metric (via
:func:`evsplat.metrics.ssim`): 11x11 Gaussian-weighted windows
(sigma = 1.5) evaluated at fully-valid positions, stabilizers derived from
the joint dynamic range of both inputs with a floor of 1.0.

The stabilizers depend on the joint dynamic range of the inputs; its
backward contribution is routed to the extremal pixels (a subgradient at
ties), so the gradient is exact almost everywhere.
"""

from __future__ import annotations

import numpy as np
from scipy import signal

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
RANGE_FLOOR = 1.0


def edge_weighted_loss(e_hat: np.ndarray, e: np.ndarray, edge_map,
                       beta: float) -> float:
    """Mean squared residual spatially weighted by 1 + beta * M."""
    loss, _ = edge_weighted_loss_grad(e_hat, e, edge_map, beta)
    return loss


def edge_weighted_loss_grad(e_hat: np.ndarray, e: np.ndarray, edge_map,
                            beta: float):
    """Returns (loss, dloss/de_hat)."""
    e_hat = np.asarray(e_hat, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    m = edge_map.values if hasattr(edge_map, "values") else np.asarray(edge_map, dtype=np.float64)
    if e_hat.shape != e.shape or e_hat.shape != m.shape:
        raise ValueError("shape mismatch between residuals and edge map")
    if beta < 0:
        raise ValueError("beta must be non-negative")
    w = 1.0 + beta * m
    resid = e_hat - e
    n = e_hat.size
    loss = float(np.sum(w * resid**2) / n)
    grad = 2.0 * w * resid / n
    return loss, grad


def _ssim_window() -> np.ndarray:
    r = SSIM_WINDOW // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / SSIM_SIGMA) ** 2)
    k /= k.sum()
    return np.outer(k, k)


_WINDOW = _ssim_window()


def _filter_valid(img: np.ndarray) -> np.ndarray:
    return signal.correlate2d(img, _WINDOW, mode="valid")


def _filter_adjoint(grid: np.ndarray) -> np.ndarray:
    # adjoint of valid-mode correlation with a symmetric kernel
    return signal.convolve2d(grid, _WINDOW, mode="full")


def _ssim_stats(x: np.ndarray, y: np.ndarray):
    drange = max(float(max(x.max(), y.max()) - min(x.min(), y.min())),
                 RANGE_FLOOR)
    c1 = (SSIM_K1 * drange) ** 2
    c2 = (SSIM_K2 * drange) ** 2
    mu_x = _filter_valid(x)
    mu_y = _filter_valid(y)
    m2x = _filter_valid(x * x)
    m2y = _filter_valid(y * y)
    mxy = _filter_valid(x * y)
    var_x = m2x - mu_x**2
    var_y = m2y - mu_y**2
    cov = mxy - mu_x * mu_y
    a1 = 2 * mu_x * mu_y + c1
    a2 = 2 * cov + c2
    b1 = mu_x**2 + mu_y**2 + c1
    b2 = var_x + var_y + c2
    return dict(mu_x=mu_x, mu_y=mu_y, a1=a1, a2=a2, b1=b1, b2=b2,
                ssim_map=(a1 * a2) / (b1 * b2))


def ssim(x: np.ndarray, y: np.ndarray) -> float:
    """Mean SSIM over valid window positions; symmetric in its arguments."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("shape mismatch")
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"inputs must be at least {SSIM_WINDOW} pixels per side")
    return float(np.mean(_ssim_stats(x, y)["ssim_map"]))


def dssim_loss(e_hat: np.ndarray, e: np.ndarray) -> float:
    """Structural dissimilarity 1 - SSIM(e, e_hat)."""
    return 1.0 - ssim(e_hat, e)


def dssim_loss_grad(e_hat: np.ndarray, e: np.ndarray):
    """Returns (loss, dloss/de_hat) with the analytic SSIM backward pass."""
    x = np.asarray(e_hat, dtype=np.float64)
    y = np.asarray(e, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("shape mismatch")
    st = _ssim_stats(x, y)
    a1, a2, b1, b2 = st["a1"], st["a2"], st["b1"], st["b2"]
    mu_x, mu_y = st["mu_x"], st["mu_y"]
    n_pos = st["ssim_map"].size
    # dS w.r.t. the window statistics (mu_x, second moment, cross moment)
    dS_dA1 = a2 / (b1 * b2)
    dS_dB1 = -a1 * a2 / (b1**2 * b2)
    dS_dA2 = a1 / (b1 * b2)
    dS_dB2 = -a1 * a2 / (b1 * b2**2)
    g_mu = dS_dA1 * 2 * mu_y + dS_dB1 * 2 * mu_x \
        + dS_dA2 * (-2 * mu_y) + dS_dB2 * (-2 * mu_x)
    g_m2x = dS_dB2
    g_mxy = dS_dA2 * 2
    dssim_dx = (_filter_adjoint(g_mu)
                + 2 * x * _filter_adjoint(g_m2x)
                + y * _filter_adjoint(g_mxy)) / n_pos
    # stabilizers depend on the joint dynamic range; when the range floor is
    # not active, route its (sub)gradient to the extremal pixels of x
    hi = max(x.max(), y.max())
    lo = min(x.min(), y.min())
    if hi - lo > RANGE_FLOOR:
        drange = hi - lo
        dS_dr = float(np.sum((dS_dA1 + dS_dB1) * 2 * SSIM_K1**2 * drange
                             + (dS_dA2 + dS_dB2) * 2 * SSIM_K2**2 * drange)) / n_pos
        if x.max() == hi:
            i = np.unravel_index(np.argmax(x), x.shape)
            dssim_dx[i] += dS_dr
        if x.min() == lo:
            i = np.unravel_index(np.argmin(x), x.shape)
            dssim_dx[i] -= dS_dr
    loss = 1.0 - float(np.mean(st["ssim_map"]))
    return loss, -dssim_dx


def total_loss(e_hat: np.ndarray, e: np.ndarray, edge_map, beta: float,
               lam: float) -> float:
    """(1 - lambda) * edge-weighted loss + lambda * DSSIM."""
    return total_loss_grad(e_hat, e, edge_map, beta, lam)[0]


def total_loss_grad(e_hat: np.ndarray, e: np.ndarray, edge_map, beta: float,
                    lam: float):
    """Returns (loss, dloss/de_hat, edge_component, dssim_component)."""
    if not (0.0 <= lam <= 1.0):
        raise ValueError("lambda must be in [0, 1]")
    l_edge, g_edge = edge_weighted_loss_grad(e_hat, e, edge_map, beta)
    if lam == 0.0:
        return l_edge, g_edge, l_edge, 0.0
    l_dssim, g_dssim = dssim_loss_grad(e_hat, e)
    if lam == 1.0:
        return l_dssim, g_dssim, l_edge, l_dssim
    loss = (1.0 - lam) * l_edge + lam * l_dssim
    grad = (1.0 - lam) * g_edge + lam * g_dssim
    return loss, grad, l_edge, l_dssim
