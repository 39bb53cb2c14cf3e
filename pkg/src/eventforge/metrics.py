"""Disparity, depth and image-quality metrics plus their text/JSON reports."""

from __future__ import annotations

import json
import math

import numpy as np

from .losses import ssim_map

PSNR_TEXT_CAP = 99.0
METRIC_KEYS = ("mae", "pe1", "pe2", "pe3", "psnr", "ssim", "delta125")


def disparity_metrics(d_pred: np.ndarray, d_gt: np.ndarray) -> dict:
    """MAE (px) and n-pixel error rates (percent of pixels with |err| > n) over mutually valid pixels.

    ``valid`` holds the pixel count; with no valid pixel every metric is NaN.
    """
    d_pred = np.asarray(d_pred, dtype=np.float64)
    d_gt = np.asarray(d_gt, dtype=np.float64)
    if d_pred.shape != d_gt.shape:
        raise ValueError(f"shape mismatch: {d_pred.shape} vs {d_gt.shape}")
    valid = np.isfinite(d_pred) & np.isfinite(d_gt)
    n = int(valid.sum())
    if n == 0:
        return {"mae": math.nan, "pe1": math.nan, "pe2": math.nan, "pe3": math.nan, "valid": 0}
    err = np.abs(d_pred[valid] - d_gt[valid])
    out = {"mae": float(err.mean())}
    for k in (1, 2, 3):
        out[f"pe{k}"] = 100.0 * np.count_nonzero(err > k) / n
    out["valid"] = n
    return out


def psnr(i: np.ndarray, i_gt: np.ndarray) -> float:
    """-10 log10(MSE) for images in [0, 1]; +inf when identical."""
    mse = float(np.mean((np.asarray(i, dtype=np.float64) - np.asarray(i_gt, dtype=np.float64)) ** 2))
    return psnr_from_mse(mse)


def psnr_from_mse(mse: float) -> float:
    if mse <= 0:
        return math.inf
    return -10.0 * math.log10(mse)


def ssim(i: np.ndarray, i_gt: np.ndarray) -> float:
    return float(ssim_map(i, i_gt).mean())


def delta_accuracy(z: np.ndarray, z_gt: np.ndarray, rho: float = 1.25) -> float:
    z, z_gt = np.asarray(z, dtype=np.float64), np.asarray(z_gt, dtype=np.float64)
    ok = np.isfinite(z) & np.isfinite(z_gt) & (z > 0) & (z_gt > 0)
    if not ok.any():
        return math.nan
    ratio = np.maximum(z[ok] / z_gt[ok], z_gt[ok] / z[ok])
    return 100.0 * np.count_nonzero(ratio <= rho) / ok.sum()


def depth_image_metrics(z_pred, z_gt, i_pred, i_gt) -> dict:
    z_pred, z_gt = np.asarray(z_pred, dtype=np.float64), np.asarray(z_gt, dtype=np.float64)
    if z_pred.shape != z_gt.shape or np.shape(i_pred) != np.shape(i_gt):
        raise ValueError("shape mismatch")
    ok = np.isfinite(z_pred) & np.isfinite(z_gt)
    mae = float(np.abs(z_pred[ok] - z_gt[ok]).mean()) if ok.any() else math.nan
    return {
        "mae": mae,
        "delta125": delta_accuracy(z_pred, z_gt),
        "psnr": psnr(i_pred, i_gt),
        "ssim": ssim(i_pred, i_gt),
    }


def _text_value(key, value):
    if key == "psnr" and value == math.inf:
        value = PSNR_TEXT_CAP
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def format_report(metrics: dict) -> str:
    """Flat ``key=value`` lines; infinite PSNR is written as 99."""
    return "\n".join(f"{k}={_text_value(k, v)}" for k, v in metrics.items())


def json_line(metrics: dict, **extra) -> str:
    row = dict(extra)
    for k in METRIC_KEYS:
        if k in metrics:
            v = metrics[k]
            row[k] = None if (isinstance(v, float) and math.isnan(v)) else (PSNR_TEXT_CAP if v == math.inf else v)
    return json.dumps(row, sort_keys=False)
