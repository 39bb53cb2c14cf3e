"""Dense tensor encodings of event streams."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .events import EventStream


@dataclass
class StackedFrame:
    data: np.ndarray  # (H, W, C)
    t_max: int = 0
    dt: int = 0
    count: int = 0

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape


def tencode(stream: EventStream, count: int) -> StackedFrame:
    """3-channel Tencode of the last ``count`` events.

    A pixel whose latest selected event is positive becomes (1, age, 0), a
    non-positive one (0, age, 1), with age = (t_max - t) / dt.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    frame = np.zeros((stream.height, stream.width, 3), dtype=np.float32)
    ev = stream.events[-count:]
    if len(ev) == 0:
        return StackedFrame(frame)
    t = ev["t"].astype(np.int64)
    t_max = int(t.max())
    dt = max(t_max - int(t.min()), 1)
    # Replay in stream order: keep the last occurrence of every pixel.
    flat = ev["y"].astype(np.int64) * stream.width + ev["x"].astype(np.int64)
    rev_unique, rev_idx = np.unique(flat[::-1], return_index=True)
    last = len(flat) - 1 - rev_idx
    pos = ev["p"][last] > 0
    age = (t_max - t[last]) / dt
    ys, xs = np.divmod(rev_unique, stream.width)
    frame[ys, xs, 0] = pos
    frame[ys, xs, 1] = age
    frame[ys, xs, 2] = ~pos
    return StackedFrame(frame, t_max=t_max, dt=dt, count=len(ev))


def voxel_grid(stream: EventStream, bins: int) -> StackedFrame:
    """Polarity-signed temporal histogram with linear splatting between neighboring bins.

    Bin centers are spread evenly over the stream's [t_begin, t_end] span, so bin
    k is centered at t_begin + k * span / (bins - 1).
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    grid = np.zeros((stream.height, stream.width, bins), dtype=np.float64)
    ev = stream.events
    if len(ev) == 0:
        return StackedFrame(grid)
    span = stream.t_end - stream.t_begin
    t = ev["t"].astype(np.float64)
    if bins == 1 or span <= 0:
        pos = np.zeros(len(ev))
    else:
        pos = (t - stream.t_begin) / span * (bins - 1)
    pos = np.clip(pos, 0, bins - 1)
    k0 = np.floor(pos).astype(np.int64)
    frac = pos - k0
    k1 = np.minimum(k0 + 1, bins - 1)
    pol = np.where(ev["p"] > 0, 1.0, -1.0)
    x = ev["x"].astype(np.int64)
    y = ev["y"].astype(np.int64)
    np.add.at(grid, (y, x, k0), pol * (1.0 - frac))
    np.add.at(grid, (y, x, k1), pol * frac)
    t_max = int(ev["t"].max())
    return StackedFrame(grid, t_max=t_max, dt=max(t_max - int(ev["t"].min()), 1), count=len(ev))
