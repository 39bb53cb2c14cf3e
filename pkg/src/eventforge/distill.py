"""Transfer RGB-camera disparity labels onto a calibrated event camera."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import SENTINEL, CameraModel, Pose, StereoRig, backproject, disparity_to_depth, transform

DEFAULT_CLIP = (0.5, 100.0)


@dataclass(frozen=True)
class RigPair:
    rgb: StereoRig
    event: StereoRig
    extrinsic: Pose  # maps RGB-left camera coordinates to event-left camera coordinates

    def inverse(self) -> RigPair:
        return RigPair(self.event, self.rgb, self.extrinsic.inverse())


@dataclass
class SplatAudit:
    """Every candidate landing on the target grid, kept for z-buffer checks."""

    target: np.ndarray  # flat target pixel index per candidate
    depth: np.ndarray
    source: np.ndarray  # flat source pixel index


def reproject_labels(
    d_rgb: np.ndarray,
    rigs: RigPair,
    clip: tuple[float, float] = DEFAULT_CLIP,
    audit: bool = False,
):
    """Disparity on the RGB-left camera -> disparity on the event-left camera.

    Depths outside ``clip`` are dropped before the transform. Each surviving
    pixel lands on the nearest integer pixel of the event camera and the
    nearest surface wins. Event pixels that receive nothing stay NaN. With
    ``audit=True`` also returns a :class:`SplatAudit`.
    """
    cam_c: CameraModel = rigs.rgb.camera
    cam_e: CameraModel = rigs.event.camera
    d_rgb = np.asarray(d_rgb, dtype=np.float64)
    if d_rgb.shape != cam_c.shape:
        raise ValueError(f"disparity shape {d_rgb.shape} does not match RGB camera {cam_c.shape}")
    z_c = disparity_to_depth(d_rgb, rigs.rgb)
    keep = np.isfinite(z_c) & (z_c >= clip[0]) & (z_c <= clip[1])

    z_e_map = np.full(cam_e.shape, SENTINEL)
    empty = SplatAudit(np.zeros(0, np.int64), np.zeros(0), np.zeros(0, np.int64))
    if not keep.any():
        return (z_e_map, empty) if audit else z_e_map

    v, u = np.nonzero(keep)
    src = v * cam_c.width + u
    p_c = backproject(np.stack([u, v], axis=-1).astype(np.float64), z_c[keep], cam_c)
    p_e = transform(rigs.extrinsic, p_c)
    z = p_e[:, 2]
    front = z > 0
    p_e, z, src = p_e[front], z[front], src[front]
    ue = np.rint(cam_e.fx * p_e[:, 0] / z + cam_e.cx).astype(np.int64)
    ve = np.rint(cam_e.fy * p_e[:, 1] / z + cam_e.cy).astype(np.int64)
    inside = (ue >= 0) & (ue < cam_e.width) & (ve >= 0) & (ve < cam_e.height)
    ue, ve, z, src = ue[inside], ve[inside], z[inside], src[inside]
    tgt = ve * cam_e.width + ue

    # z-buffer: nearest candidate per target, ties to the lowest source index.
    order = np.lexsort((src, z, tgt))
    tgt_s, z_s = tgt[order], z[order]
    first = np.r_[True, tgt_s[1:] != tgt_s[:-1]]
    flat = z_e_map.reshape(-1)
    flat[tgt_s[first]] = z_s[first]
    d_e = np.full(cam_e.shape, SENTINEL)
    ok = np.isfinite(z_e_map)
    d_e[ok] = rigs.event.bf / z_e_map[ok]
    if audit:
        return d_e, SplatAudit(tgt, z, src)
    return d_e


def identity_transfer(d: np.ndarray) -> np.ndarray:
    """Pixel-aligned sensors (e.g. DAVIS): the RGB-frame disparity already is the event-frame label."""
    return np.array(d, copy=True)
