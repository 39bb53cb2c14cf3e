"""Frame-to-event conversion with a linear log-intensity model, and the stereo driver."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraModel, Pose, StereoRig, depth_to_disparity, relative_pose, shifted_eye
from .render import RenderOutput, SparseVoxelScene, flow_from_depth, render

logger = logging.getLogger(__name__)

EVENT_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1")])
EPS_LOG = 1e-3
LUMA = np.array([0.299, 0.587, 0.114])
# Absolute slack on level crossings so that a change of exactly k*C yields k events
# despite rounding in log().
CROSS_TOL = 1e-9


@dataclass
class EventStream:
    events: np.ndarray  # structured EVENT_DTYPE, sorted by (t, y, x)
    width: int
    height: int
    t_begin: int = 0
    t_end: int = 0

    def __post_init__(self):
        self.events = np.asarray(self.events, dtype=EVENT_DTYPE)

    def __len__(self) -> int:
        return len(self.events)

    @classmethod
    def empty(cls, width: int, height: int, t_begin: int = 0, t_end: int = 0) -> EventStream:
        return cls(np.zeros(0, EVENT_DTYPE), width, height, t_begin, t_end)

    @property
    def t(self) -> np.ndarray:
        return self.events["t"]

    @property
    def x(self) -> np.ndarray:
        return self.events["x"]

    @property
    def y(self) -> np.ndarray:
        return self.events["y"]

    @property
    def p(self) -> np.ndarray:
        return self.events["p"]

    def check(self) -> list[str]:
        """Return a list of invariant violations (empty when the stream is well formed)."""
        problems = []
        ev = self.events
        if len(ev):
            if np.any(np.diff(ev["t"].astype(np.int64)) < 0):
                problems.append("timestamps not sorted")
            if ev["x"].max() >= self.width or ev["y"].max() >= self.height:
                problems.append("event outside sensor")
            if ev["t"].min() < self.t_begin or ev["t"].max() > self.t_end:
                problems.append("event outside time span")
            if not np.all(np.isin(ev["p"], (-1, 1))):
                problems.append("polarity not in {-1, +1}")
        return problems


def luma(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float64)
    return rgb if rgb.ndim == 2 else rgb @ LUMA


@dataclass
class SimulatorState:
    """Per-pixel reference log intensity and contrast thresholds of one sensor."""

    log_ref: np.ndarray
    c_pos: np.ndarray
    c_neg: np.ndarray
    eps_log: float = EPS_LOG

    def __post_init__(self):
        self.log_ref = np.array(self.log_ref, dtype=np.float64)
        self.c_pos = np.broadcast_to(np.asarray(self.c_pos, dtype=np.float64), self.log_ref.shape).copy()
        self.c_neg = np.broadcast_to(np.asarray(self.c_neg, dtype=np.float64), self.log_ref.shape).copy()
        if np.any(~(self.c_pos > 0)) or np.any(~(self.c_neg > 0)):
            raise ValueError("contrast thresholds must be positive")

    @classmethod
    def from_frame(cls, frame: np.ndarray, c_pos, c_neg=None, eps_log: float = EPS_LOG) -> SimulatorState:
        frame = luma(frame)
        return cls(np.log(frame + eps_log), c_pos, c_pos if c_neg is None else c_neg, eps_log)


def sample_thresholds(rng: np.random.Generator, shape, low: float = 0.15, high: float = 0.25) -> np.ndarray:
    """One contrast threshold per pixel, uniform on [low, high]."""
    if not 0 < low <= high:
        raise ValueError("threshold bounds must satisfy 0 < low <= high")
    return rng.uniform(low, high, size=shape)


def subdivision_level(flow: np.ndarray) -> int:
    """n = max(ceil(log2(max |F|)), 0); 0 for empty or all-invalid flow."""
    flow = np.asarray(flow, dtype=np.float64)
    if flow.size == 0:
        return 0
    mag = np.hypot(flow[..., 0], flow[..., 1])
    mag = mag[np.isfinite(mag)]
    if mag.size == 0:
        return 0
    fmax = float(mag.max())
    if fmax <= 0:
        return 0
    return max(math.ceil(math.log2(fmax)), 0)


def _crossings(state, l0, l1, c, sign, t_prev, dt):
    """Events for one polarity. Returns flat pixel indices, times, and level count per pixel."""
    excess = sign * (l1 - state.log_ref.ravel())
    n = np.floor(np.maximum(excess, 0.0) / c + CROSS_TOL).astype(np.int64)
    # A crossing at the start instant belongs to the previous step.
    n = np.where(sign * (l1 - l0) > 0, n, 0)
    total = int(n.sum())
    pix = np.repeat(np.arange(n.size), n)
    if total == 0:
        return pix, np.zeros(0, dtype=np.uint64), n
    k = np.arange(total) - np.repeat(np.cumsum(n) - n, n) + 1
    level = state.log_ref.ravel()[pix] + sign * k * c[pix]
    frac = (level - l0[pix]) / (l1[pix] - l0[pix])
    frac = np.clip(frac, 0.0, 1.0)
    # Events fire at the first integer microsecond at which the level has been reached.
    t = t_prev + np.ceil(frac * dt - 1e-6)
    t = np.clip(t, t_prev, t_prev + dt).astype(np.uint64)
    return pix, t, n


def step(state: SimulatorState, frame_prev: np.ndarray, frame_next: np.ndarray, t_prev: int, t_next: int) -> np.ndarray:
    """Advance ``state`` from ``frame_prev`` at ``t_prev`` to ``frame_next`` at ``t_next`` (microseconds).

    Log intensity is interpolated linearly in time between the two frames; an
    event fires each time it moves a full threshold away from the pixel's
    reference level, and the reference then jumps to that level. Returns a
    structured array sorted by (t, y, x).
    """
    frame_prev, frame_next = luma(frame_prev), luma(frame_next)
    if frame_prev.shape != frame_next.shape or frame_prev.shape != state.log_ref.shape:
        raise ValueError("frame and state shapes differ")
    t_prev, t_next = int(t_prev), int(t_next)
    if t_next <= t_prev:
        raise ValueError("t_next must be greater than t_prev")
    dt = t_next - t_prev
    l0 = np.log(frame_prev.ravel() + state.eps_log)
    l1 = np.log(frame_next.ravel() + state.eps_log)

    pp, tp, npos = _crossings(state, l0, l1, state.c_pos.ravel(), 1.0, t_prev, dt)
    pn, tn, nneg = _crossings(state, l0, l1, state.c_neg.ravel(), -1.0, t_prev, dt)
    ref = state.log_ref.ravel()
    ref += npos * state.c_pos.ravel() - nneg * state.c_neg.ravel()

    pix = np.concatenate([pp, pn])
    out = np.zeros(len(pix), EVENT_DTYPE)
    w = frame_prev.shape[1]
    out["t"] = np.concatenate([tp, tn])
    out["x"] = pix % w
    out["y"] = pix // w
    out["p"] = np.concatenate([np.ones(len(pp), np.int8), -np.ones(len(pn), np.int8)])
    order = np.lexsort((out["x"], out["y"], out["t"]))
    return out[order]


@dataclass
class LabeledSample:
    tau: float
    t: int
    pose: Pose
    baseline: float
    depth: np.ndarray
    disparity: np.ndarray
    conf_ao: np.ndarray
    conf_vsize: np.ndarray
    image_ll: np.ndarray
    image_l: np.ndarray
    image_r: np.ndarray


@dataclass
class StereoSimResult:
    left: EventStream
    right: EventStream
    keyframes: list[LabeledSample] = field(default_factory=list)
    levels: list[int] = field(default_factory=list)  # subdivision level per coarse step


def _keyframe(scene, pose, rig, tau, t, left: RenderOutput, right: RenderOutput, invert_size_term=False):
    from .render import invert_size_confidence

    ll = render(scene, shifted_eye(pose, -rig.baseline), rig.camera)
    conf_vsize = invert_size_confidence(left) if invert_size_term else left.conf_vsize
    return LabeledSample(
        tau=tau,
        t=t,
        pose=pose,
        baseline=rig.baseline,
        depth=left.depth,
        disparity=depth_to_disparity(left.depth, rig),
        conf_ao=left.conf_ao,
        conf_vsize=conf_vsize,
        image_ll=ll.color,
        image_l=left.color,
        image_r=right.color,
    )


def _truncate(events: np.ndarray, cap: int) -> np.ndarray:
    return events[:cap] if len(events) > cap else events


def simulate_stereo(
    scene: SparseVoxelScene,
    traj,
    rig: StereoRig,
    dtau: float,
    t_span: int,
    thresholds: tuple[float, float] = (0.15, 0.25),
    caps: tuple[int, int] = (650_000, 650_000),
    tau_range: tuple[float, float] = (0.0, 1.0),
    rng: np.random.Generator | None = None,
    keyframes: str = "last",
    invert_size_term: bool = False,
    max_level: int = 10,
) -> StereoSimResult:
    """Render a stereo pair along ``traj`` over ``tau_range`` and convert it to events.

    The window [tau0, tau1] maps linearly onto [0, t_span] microseconds and is
    split into coarse steps of at most ``dtau``. Each coarse step is subdivided
    into 2**n renderings, n taken from the larger of the two eyes' maximum flow.
    The right eye sits ``rig.baseline`` meters along the left camera's +x axis;
    the left-left eye used for the trinocular triplet sits the same distance
    along -x. Keyframes ("last" or "all" coarse-step ends) carry depth,
    disparity, confidences, and the RGB triplet of the left eye.
    """
    cam = rig.camera
    if not 0 < dtau <= 1:
        raise ValueError("dtau must lie in (0, 1]")
    if caps[0] <= 0 or caps[1] <= 0:
        raise ValueError("event caps must be positive")
    if keyframes not in ("last", "all"):
        raise ValueError("keyframes must be 'last' or 'all'")
    tau0, tau1 = tau_range
    if not 0 <= tau0 <= tau1 <= 1:
        raise ValueError("tau_range must satisfy 0 <= tau0 <= tau1 <= 1")
    t_span = int(t_span)
    if t_span < 0:
        raise ValueError("t_span must be non-negative")
    rng = rng if rng is not None else np.random.default_rng(0)

    c_left = sample_thresholds(rng, cam.shape, *thresholds)
    c_right = sample_thresholds(rng, cam.shape, *thresholds)

    def eyes(tau):
        pose = traj.sample(tau)
        return pose, shifted_eye(pose, rig.baseline)

    def t_of(tau):
        if tau1 == tau0:
            return 0
        return int(round((tau - tau0) / (tau1 - tau0) * t_span))

    pose_l, pose_r = eyes(tau0)
    out_l, out_r = render(scene, pose_l, cam), render(scene, pose_r, cam)
    state_l = SimulatorState.from_frame(out_l.color, c_left)
    state_r = SimulatorState.from_frame(out_r.color, c_right)

    result = StereoSimResult(EventStream.empty(cam.width, cam.height, 0, t_span), EventStream.empty(cam.width, cam.height, 0, t_span))
    chunks_l, chunks_r = [], []
    count_l = count_r = 0

    n_coarse = 0 if tau1 == tau0 else max(1, math.ceil((tau1 - tau0) / dtau - 1e-12))
    coarse = np.linspace(tau0, tau1, n_coarse + 1)
    for i in range(n_coarse):
        ta, tb = float(coarse[i]), float(coarse[i + 1])
        next_l, next_r = eyes(tb)
        flow_l = flow_from_depth(out_l.depth, relative_pose(pose_l, next_l), cam)
        flow_r = flow_from_depth(out_r.depth, relative_pose(pose_r, next_r), cam)
        n = max(subdivision_level(flow_l), subdivision_level(flow_r))
        if n > max_level:
            logger.warning("subdivision level %d clipped to %d", n, max_level)
            n = max_level
        result.levels.append(n)
        subs = np.linspace(ta, tb, 2**n + 1)
        for j in range(1, len(subs)):
            tau = float(subs[j])
            p_l, p_r = (next_l, next_r) if j == len(subs) - 1 else eyes(tau)
            new_l, new_r = render(scene, p_l, cam), render(scene, p_r, cam)
            t_a, t_b = t_of(float(subs[j - 1])), t_of(tau)
            if t_b > t_a:
                ev_l = step(state_l, out_l.color, new_l.color, t_a, t_b)
                ev_r = step(state_r, out_r.color, new_r.color, t_a, t_b)
                if count_l < caps[0]:
                    ev_l = _truncate(ev_l, caps[0] - count_l)
                    chunks_l.append(ev_l)
                    count_l += len(ev_l)
                if count_r < caps[1]:
                    ev_r = _truncate(ev_r, caps[1] - count_r)
                    chunks_r.append(ev_r)
                    count_r += len(ev_r)
            out_l, out_r = new_l, new_r
        pose_l, pose_r = next_l, next_r
        if keyframes == "all" or i == n_coarse - 1:
            result.keyframes.append(_keyframe(scene, pose_l, rig, tb, t_of(tb), out_l, out_r, invert_size_term))

    if n_coarse == 0:
        result.keyframes.append(_keyframe(scene, pose_l, rig, tau0, 0, out_l, out_r, invert_size_term))
    if chunks_l:
        result.left.events = np.concatenate(chunks_l)
    if chunks_r:
        result.right.events = np.concatenate(chunks_r)
    return result
