"""Continuous virtual camera trajectories tau in [0, 1] -> camera-to-world Pose."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline
from scipy.spatial import Delaunay, cKDTree

from .geometry import GeometryError, Pose, reorthogonalize

GRAVITY = np.array([0.0, 0.0, 1.0])
RIDGE = 1e-10
FD_STEP = 1e-3
MIN_POSES = 8
_PARALLEL_TOL = 1e-6


class TrajectoryError(ValueError):
    pass


def _check_tau(tau: float):
    if not 0.0 <= tau <= 1.0:
        raise TrajectoryError(f"tau={tau} outside [0, 1]")


@dataclass(frozen=True)
class LocalTrajectory:
    """[R | t + tau * r]: a straight sweep from ``base`` with constant orientation."""

    base: Pose
    axis: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.axis, dtype=np.float64).reshape(3)
        if not np.linalg.norm(r) > 0:
            raise TrajectoryError("sweep axis must be non-zero")
        object.__setattr__(self, "axis", r)

    kind = "local"

    def sample(self, tau: float) -> Pose:
        _check_tau(tau)
        return Pose(self.base.rotation, self.base.translation + tau * self.axis)


def local_trajectory(base: Pose, r) -> LocalTrajectory:
    return LocalTrajectory(base, r)


@dataclass
class SplineFit:
    """Least-squares cubic B-spline fit of vector samples over [0, 1]."""

    knots: np.ndarray  # full knot vector, clamped at 0 and 1
    coefficients: np.ndarray  # (n_basis, dims)
    residual: float  # max Euclidean residual at the fitted samples

    def __post_init__(self):
        self._spline = BSpline(self.knots, self.coefficients, 3, extrapolate=False)

    def __call__(self, tau):
        return self._spline(tau)

    def derivative(self, tau, nu: int = 1):
        return self._spline.derivative(nu)(tau)


def uniform_knots(n_knots: int) -> np.ndarray:
    """Clamped cubic knot vector with ``n_knots`` uniformly spaced distinct knots on [0, 1]."""
    inner = np.linspace(0.0, 1.0, n_knots)
    return np.r_[[0.0] * 3, inner, [1.0] * 3]


def fit_spline(taus: np.ndarray, values: np.ndarray, n_knots: int | None = None, ridge: float = RIDGE) -> SplineFit:
    taus = np.asarray(taus, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if n_knots is None:
        n_knots = max(4, math.ceil(len(taus) / 4))
    knots = uniform_knots(n_knots)
    A = BSpline.design_matrix(taus, knots, 3).toarray()
    if len(taus) < A.shape[1]:
        raise TrajectoryError("fewer samples than spline coefficients")
    lhs = A.T @ A + ridge * np.eye(A.shape[1])
    coef = np.linalg.solve(lhs, A.T @ values)
    res = np.linalg.norm(A @ coef - values, axis=-1) if values.ndim > 1 else np.abs(A @ coef - values)
    return SplineFit(knots, coef, float(res.max()))


def frame_from_vectors(r: np.ndarray, l: np.ndarray) -> np.ndarray:
    """R = [d x l, d, l] with d = l x r, from the fitted first (r) and third (l) columns."""
    ln = np.linalg.norm(l)
    if ln == 0:
        raise TrajectoryError("degenerate forward vector")
    l = l / ln
    d = np.cross(l, r)
    dn = np.linalg.norm(d)
    if dn < _PARALLEL_TOL:
        raise TrajectoryError("fitted rotation vectors are parallel")
    d = d / dn
    return reorthogonalize(np.column_stack([np.cross(d, l), d, l]))


def motion_aligned_frame(velocity: np.ndarray, g: np.ndarray = GRAVITY) -> np.ndarray:
    """R' = [g x v, v x (g x v), v] with v the normalized motion direction."""
    vn = np.linalg.norm(velocity)
    if vn < _PARALLEL_TOL:
        raise TrajectoryError("motion direction undefined (zero velocity)")
    v = velocity / vn
    r = np.cross(g, v)
    rn = np.linalg.norm(r)
    if rn < _PARALLEL_TOL:
        raise TrajectoryError("motion direction parallel to gravity")
    r = r / rn
    return reorthogonalize(np.column_stack([r, np.cross(v, r), v]))


@dataclass
class GlobalTrajectory:
    translation: SplineFit
    right: SplineFit  # first rotation column
    forward: SplineFit  # third rotation column
    orientation: str = "from_splines"  # or "motion_aligned"
    z_range: tuple[float, float] | None = None
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())

    kind = "global"

    def position(self, tau: float) -> np.ndarray:
        t = np.asarray(self.translation(tau), dtype=np.float64)
        if self.z_range is not None:
            t = t.copy()
            t[..., 2] = np.clip(t[..., 2], *self.z_range)
        return t

    def velocity(self, tau: float, h: float = FD_STEP) -> np.ndarray:
        """Central difference of the (clamped) position; one-sided at the ends."""
        a, b = max(tau - h, 0.0), min(tau + h, 1.0)
        return (self.position(b) - self.position(a)) / (b - a)

    def sample(self, tau: float) -> Pose:
        _check_tau(tau)
        t = self.position(tau)
        if self.orientation == "motion_aligned":
            R = motion_aligned_frame(self.velocity(tau), self.gravity)
        else:
            R = frame_from_vectors(self.right(tau), self.forward(tau))
        return Pose(R, t)


def sample(traj, tau: float) -> Pose:
    return traj.sample(tau)


def fit_global_trajectory(
    poses: list[Pose],
    subset_stride: int,
    orientation: str = "from_splines",
    z_percentiles: tuple[float, float] | None = (45.0, 55.0),
    n_knots: int | None = None,
) -> GlobalTrajectory:
    """Fit translation and two rotation-column splines to every ``subset_stride``-th pose.

    Samples are placed uniformly in tau by index. With ``z_percentiles`` the
    sampled height is clamped to that percentile range of the fitted poses.
    """
    if orientation not in ("from_splines", "motion_aligned"):
        raise TrajectoryError(f"unknown orientation mode {orientation!r}")
    if subset_stride < 1:
        raise TrajectoryError("subset_stride must be >= 1")
    poses = list(poses)[::subset_stride]
    if len(poses) < MIN_POSES:
        raise TrajectoryError(f"need at least {MIN_POSES} poses after striding, got {len(poses)}")
    t = np.array([p.translation for p in poses])
    R = np.array([p.rotation for p in poses])
    if np.ptp(t, axis=0).max() <= 1e-12:
        raise TrajectoryError("all poses coincide")
    taus = np.linspace(0.0, 1.0, len(poses))
    z_range = None
    if z_percentiles is not None:
        lo, hi = np.percentile(t[:, 2], z_percentiles)
        z_range = (float(lo), float(hi))
    traj = GlobalTrajectory(
        translation=fit_spline(taus, t, n_knots),
        right=fit_spline(taus, R[:, :, 0], n_knots),
        forward=fit_spline(taus, R[:, :, 2], n_knots),
        orientation=orientation,
        z_range=z_range,
    )
    if orientation == "motion_aligned":
        # Surface a gravity-parallel or stationary stretch at fit time rather than mid-render.
        for tau in np.linspace(0.0, 1.0, 101):
            traj.sample(float(tau))
    return traj


def default_alpha(points: np.ndarray) -> float:
    """Twice the median nearest-neighbor distance."""
    d, _ = cKDTree(points).query(points, k=2)
    return 2.0 * float(np.median(d[:, 1]))


def _circumradius(a, b, c):
    ab = np.linalg.norm(b - a, axis=-1)
    bc = np.linalg.norm(c - b, axis=-1)
    ca = np.linalg.norm(a - c, axis=-1)
    cross = np.abs((b - a)[:, 0] * (c - a)[:, 1] - (b - a)[:, 1] * (c - a)[:, 0])
    with np.errstate(divide="ignore"):
        return np.where(cross > 0, ab * bc * ca / (2.0 * cross), np.inf)


def _boundary_loops(edges: list[tuple[int, int]]) -> list[list[int]]:
    nbrs: dict[int, list[int]] = {}
    for a, b in edges:
        nbrs.setdefault(a, []).append(b)
        nbrs.setdefault(b, []).append(a)
    used = set()
    loops = []
    for a, b in sorted(edges):
        if (a, b) in used:
            continue
        loop = [a]
        prev, cur = a, b
        used.add((min(a, b), max(a, b)))
        while cur != a:
            loop.append(cur)
            nxt = [n for n in sorted(nbrs[cur]) if n != prev and (min(cur, n), max(cur, n)) not in used]
            if not nxt:
                break
            prev, cur = cur, nxt[0]
            used.add((min(prev, cur), max(prev, cur)))
        loops.append(loop)
    return loops


def alpha_shape_path(poses: list[Pose], alpha: float | None = None) -> list[Pose]:
    """Boundary loop of the alpha shape of the poses' top-view (x, y) positions.

    Delaunay triangles with circumradius <= ``alpha`` are kept; the longest closed
    boundary loop is returned counter-clockwise, each vertex lifted back to the
    input pose nearest in the plane (lowest index on ties).
    """
    if len(poses) < 4:
        raise TrajectoryError("need at least 4 poses")
    xyz = np.array([p.translation for p in poses])
    pts = xyz[:, :2]
    centered = pts - pts.mean(axis=0)
    if np.linalg.matrix_rank(centered, tol=1e-9 * max(np.abs(centered).max(), 1e-300)) < 2:
        raise TrajectoryError("top-view points are collinear")
    if alpha is None:
        alpha = default_alpha(pts)
    try:
        tri = Delaunay(pts)
    except Exception as exc:  # qhull raises its own error type
        raise TrajectoryError(f"triangulation failed: {exc}") from exc
    simp = tri.simplices
    rad = _circumradius(pts[simp[:, 0]], pts[simp[:, 1]], pts[simp[:, 2]])
    kept = simp[rad <= alpha * (1 + 1e-9)]
    if len(kept) == 0:
        raise TrajectoryError("alpha too small: no triangle survives")
    count: dict[tuple[int, int], int] = {}
    for t in kept:
        for i, j in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            e = (int(min(i, j)), int(max(i, j)))
            count[e] = count.get(e, 0) + 1
    boundary = [e for e, c in count.items() if c == 1]
    loops = _boundary_loops(boundary)

    def perimeter(loop):
        q = pts[loop]
        return float(np.linalg.norm(q - np.roll(q, -1, axis=0), axis=1).sum())

    loop = max(loops, key=lambda lp: (perimeter(lp), -min(lp)))
    q = pts[loop]
    signed_area = 0.5 * np.sum(q[:, 0] * np.roll(q[:, 1], -1) - np.roll(q[:, 0], -1) * q[:, 1])
    if signed_area < 0:
        loop = [loop[0]] + loop[1:][::-1]
    # Lift: nearest input pose in the plane, lowest index on ties.
    out = []
    for idx in loop:
        d = np.linalg.norm(pts - pts[idx], axis=1)
        j = int(np.flatnonzero(d == d.min())[0])
        out.append(poses[j])
    return out


def load_poses(path) -> list[Pose]:
    """Whitespace-separated text, 12 values per line: row-major 3x4 [R | t]."""
    poses = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            vals = line.split()
            if len(vals) != 12:
                raise TrajectoryError(f"{path}:{lineno}: expected 12 values, got {len(vals)}")
            m = np.array([float(v) for v in vals]).reshape(3, 4)
            try:
                poses.append(Pose(reorthogonalize(m[:, :3]), m[:, 3]))
            except GeometryError as exc:
                raise TrajectoryError(f"{path}:{lineno}: {exc}") from exc
    return poses


def save_poses(path, poses: list[Pose]):
    with open(path, "w") as fh:
        for p in poses:
            m = np.hstack([p.rotation, p.translation[:, None]])
            fh.write(" ".join(repr(float(v)) for v in m.ravel()) + "\n")
