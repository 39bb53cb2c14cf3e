"""Confidence-gated disparity supervision and trinocular photometric losses."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

SSIM_SIGMA = 1.5
SSIM_RADIUS = 5  # 11x11 window
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2

MU_AO = 0.5
MU_VSIZE = 0.75


@dataclass(frozen=True)
class LossWeights:
    lambda_disp: float = 1.0
    lambda_3p: float = 0.1
    mu: float = MU_AO
    beta: float = 0.85
    lambda_smooth: float = 0.1

    def __post_init__(self):
        if min(self.lambda_disp, self.lambda_3p, self.lambda_smooth) < 0:
            raise ValueError("loss weights must be non-negative")
        if not (0 <= self.mu <= 1 and 0 <= self.beta <= 1):
            raise ValueError("mu and beta must lie in [0, 1]")


def _as_channels(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return img[..., None] if img.ndim == 2 else img


def _check_same(a: np.ndarray, b: np.ndarray):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")


def ssim_map(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-pixel SSIM over an 11x11 Gaussian window (sigma 1.5), averaged over channels."""
    _check_same(x, y)
    x, y = _as_channels(x), _as_channels(y)
    trunc = SSIM_RADIUS / SSIM_SIGMA
    out = np.zeros(x.shape[:2])
    for c in range(x.shape[2]):
        a, b = x[..., c], y[..., c]

        def blur(z):
            return gaussian_filter(z, SSIM_SIGMA, truncate=trunc, mode="reflect")

        mu_a, mu_b = blur(a), blur(b)
        var_a = blur(a * a) - mu_a * mu_a
        var_b = blur(b * b) - mu_b * mu_b
        cov = blur(a * b) - mu_a * mu_b
        num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
        den = (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
        out += num / den
    return out / x.shape[2]


def truncate_conf(c: np.ndarray, mu: float) -> np.ndarray:
    """eta(C; mu): zero where C <= mu, C elsewhere."""
    c = np.asarray(c, dtype=np.float64)
    return np.where(c <= mu, 0.0, c)


def photometric(i: np.ndarray, i_warped: np.ndarray, beta: float = 0.85) -> np.ndarray:
    """beta * (1 - SSIM) / 2 + (1 - beta) * |i - i_warped|, per pixel."""
    _check_same(i, i_warped)
    l1 = np.abs(_as_channels(i) - _as_channels(i_warped)).mean(axis=2)
    if beta == 0:
        return l1
    return beta * (1.0 - ssim_map(i, i_warped)) / 2.0 + (1.0 - beta) * l1


def warp_horizontal(img: np.ndarray, disp: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Backward warp: out(x, y) = img(x + disp(x, y), y) with linear interpolation.

    Returns the warped image and a mask of samples that fell inside the source
    image. Outside samples are filled from the clamped coordinate.
    """
    img = np.asarray(img, dtype=np.float64)
    disp = np.asarray(disp, dtype=np.float64)
    H, W = img.shape[:2]
    if disp.shape != (H, W):
        raise ValueError("disparity must match the image grid")
    xs = np.arange(W, dtype=np.float64)[None, :] + disp
    valid = np.isfinite(xs) & (xs >= 0) & (xs <= W - 1)
    xs = np.clip(np.nan_to_num(xs, nan=0.0), 0, W - 1)
    x0 = np.floor(xs).astype(np.int64)
    x1 = np.minimum(x0 + 1, W - 1)
    w = xs - x0
    rows = np.arange(H)[:, None]
    if img.ndim == 3:
        w = w[..., None]
    out = img[rows, x0] * (1 - w) + img[rows, x1] * w
    return out, valid


@dataclass
class TrinocularResult:
    loss: np.ndarray  # per-pixel min over the two warps, NaN where neither is valid
    automask: np.ndarray  # {0, 1}
    branch: np.ndarray  # 0: left-left warp chosen, 1: right warp chosen, -1: none


def trinocular(i_ll, i_l, i_r, d, beta: float = 0.85) -> TrinocularResult:
    """Per-pixel min of the photometric losses of I_LL warped by +D and I_R warped by -D onto I_L."""
    _check_same(i_ll, i_l)
    _check_same(i_r, i_l)
    w_ll, ok_ll = warp_horizontal(i_ll, d)
    w_r, ok_r = warp_horizontal(i_r, -np.asarray(d, dtype=np.float64))
    l_ll = np.where(ok_ll, photometric(i_l, w_ll, beta), np.inf)
    l_r = np.where(ok_r, photometric(i_l, w_r, beta), np.inf)
    warped = np.minimum(l_ll, l_r)
    branch = np.where(l_r < l_ll, 1, 0)
    any_ok = ok_ll | ok_r
    branch = np.where(any_ok, branch, -1)
    ident = np.minimum(photometric(i_l, i_ll, beta), photometric(i_l, i_r, beta))
    automask = (any_ok & (warped < ident)).astype(np.float64)
    loss = np.where(any_ok, warped, np.nan)
    return TrinocularResult(loss, automask, branch)


def nerf_supervised_loss(d_pred, d_ref, conf, triplet, weights: LossWeights = LossWeights()) -> float:
    """Mean over valid pixels of
    lambda_disp * eta(C) * |d_pred - d_ref| + M_auto * lambda_3p * (1 - eta(C)) * L_3p.

    ``triplet`` is (I_LL, I_L, I_R); the photometric branch warps with ``d_pred``.
    Returns 0.0 with a RuntimeWarning when no pixel is valid.
    """
    d_pred = np.asarray(d_pred, dtype=np.float64)
    d_ref = np.asarray(d_ref, dtype=np.float64)
    conf = np.asarray(conf, dtype=np.float64)
    _check_same(d_pred, d_ref)
    _check_same(d_pred, conf)
    valid = np.isfinite(d_pred) & np.isfinite(d_ref) & np.isfinite(conf)
    if not valid.any():
        warnings.warn("nerf_supervised_loss: no valid pixels, returning 0", RuntimeWarning, stacklevel=2)
        return 0.0
    eta = truncate_conf(conf, weights.mu)
    l_disp = np.abs(d_pred - d_ref)
    tri = trinocular(*triplet, np.where(np.isfinite(d_pred), d_pred, 0.0), beta=weights.beta)
    l_3p = np.nan_to_num(tri.loss, nan=0.0)
    total = weights.lambda_disp * eta * l_disp + tri.automask * weights.lambda_3p * (1.0 - eta) * l_3p
    return float(total[valid].mean())


def weighted_sum_loss(terms) -> float:
    """sum_i w_i * term_i over (term, weight) pairs."""
    return float(sum(w * v for v, w in terms))


def smoothness(d: np.ndarray, image: np.ndarray | None = None) -> float:
    """Mean absolute disparity gradient, edge-aware when ``image`` is given."""
    d = np.asarray(d, dtype=np.float64)
    gx = np.abs(np.diff(d, axis=1))
    gy = np.abs(np.diff(d, axis=0))
    if image is not None:
        img = _as_channels(image)
        gx = gx * np.exp(-np.abs(np.diff(img, axis=1)).mean(axis=2))
        gy = gy * np.exp(-np.abs(np.diff(img, axis=0)).mean(axis=2))
    return float(np.nanmean(gx) + np.nanmean(gy))
