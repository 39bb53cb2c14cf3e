"""Pinhole/epipolar geometry: poses, projection, disparity-depth conversion."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Quiet NaN marks invalid depth / disparity / flow pixels.
SENTINEL = np.nan
EPS_DIV = 1e-9
_SO3_TOL = 1e-9


class GeometryError(ValueError):
    """Raised for invalid geometric inputs (degenerate matrices, bad pixels)."""


@dataclass(frozen=True)
class Pose:
    """Rigid transform x -> R @ x + t.

    Trajectory and scene poses are camera-to-world: the columns of ``rotation``
    are the camera axes (x right, y down, z forward) expressed in the world
    frame and ``translation`` is the camera center.
    """

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), atol=_SO3_TOL * 10) or abs(np.linalg.det(R) - 1.0) > _SO3_TOL * 10:
            raise GeometryError("rotation is not in SO(3)")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> Pose:
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> Pose:
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def compose(self, other: Pose) -> Pose:
        """Return ``self * other`` (apply ``other`` first)."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def __matmul__(self, other: Pose) -> Pose:
        return self.compose(other)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return transform(self, points)


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise GeometryError("principal point must lie inside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def pixel_grid(self) -> tuple[np.ndarray, np.ndarray]:
        """Integer pixel-center coordinates (u, v), each of shape (H, W)."""
        v, u = np.mgrid[0 : self.height, 0 : self.width]
        return u.astype(np.float64), v.astype(np.float64)


@dataclass(frozen=True)
class StereoRig:
    camera: CameraModel
    baseline: float

    def __post_init__(self):
        if not self.baseline > 0:
            raise GeometryError("baseline must be positive")

    @property
    def bf(self) -> float:
        return self.baseline * self.camera.fx


def _invert_guarded(values: np.ndarray, numerator: float) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    out = np.full(values.shape, SENTINEL)
    ok = np.isfinite(values) & (values > EPS_DIV)
    out[ok] = numerator / values[ok]
    return out


def disparity_to_depth(d: np.ndarray, rig: StereoRig) -> np.ndarray:
    """Z = b*fx/D; disparities at or below ``EPS_DIV`` (or invalid) map to NaN."""
    return _invert_guarded(d, rig.bf)


def depth_to_disparity(z: np.ndarray, rig: StereoRig) -> np.ndarray:
    """D = b*fx/Z, with the same guard as :func:`disparity_to_depth`."""
    return _invert_guarded(z, rig.bf)


def backproject(u: np.ndarray, z: float | np.ndarray, cam: CameraModel) -> np.ndarray:
    """Lift pixel(s) ``u`` (..., 2) or homogeneous (..., 3) at depth ``z`` to camera-frame points."""
    u = np.asarray(u, dtype=np.float64)
    if u.shape[-1] == 3:
        u = u[..., :2] / u[..., 2:3]
    z = np.asarray(z, dtype=np.float64)
    x, y = u[..., 0], u[..., 1]
    if np.any((x < -0.5) | (x > cam.width - 0.5) | (y < -0.5) | (y > cam.height - 0.5)):
        raise GeometryError("pixel outside image bounds")
    if np.any(~(z > 0)):
        raise GeometryError("depth must be positive")
    return np.stack([(x - cam.cx) / cam.fx * z, (y - cam.cy) / cam.fy * z, np.broadcast_to(z, x.shape)], axis=-1)


def project(p: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Project camera-frame point(s) to (u, v, z). Points with z <= 0 raise."""
    p = np.asarray(p, dtype=np.float64)
    z = p[..., 2]
    if np.any(~(z > 0)):
        raise GeometryError("point behind camera")
    return np.stack([cam.fx * p[..., 0] / z + cam.cx, cam.fy * p[..., 1] / z + cam.cy, z], axis=-1)


def transform(pose: Pose, p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    return p @ pose.rotation.T + pose.translation


def reorthogonalize(m: np.ndarray) -> np.ndarray:
    """Nearest rotation to ``m`` in Frobenius norm (orthogonal polar factor)."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        raise GeometryError("expected a finite 3x3 matrix")
    U, s, Vt = np.linalg.svd(m)
    if s[-1] <= 1e-12 * max(s[0], 1e-300):
        raise GeometryError("matrix is rank deficient")
    if np.linalg.det(U @ Vt) < 0:
        raise GeometryError("matrix is closer to a reflection than a rotation")
    return U @ Vt


def yaw(angle: float) -> np.ndarray:
    """Rotation about +z by ``angle`` radians."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def relative_pose(src: Pose, dst: Pose) -> Pose:
    """Transform mapping points in the ``src`` camera frame into the ``dst`` camera frame.

    Both poses are camera-to-world.
    """
    return dst.inverse() @ src


def shifted_eye(pose: Pose, offset_x: float) -> Pose:
    """Camera-to-world pose of a camera displaced by ``offset_x`` meters along its own x axis."""
    return Pose(pose.rotation, pose.translation + pose.rotation[:, 0] * offset_x)
