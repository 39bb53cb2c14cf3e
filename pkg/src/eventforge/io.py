"""Binary and text file formats: PFM, PPM, SVXL scenes, EVT1 events, STK1 stacks."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .events import EVENT_DTYPE, EventStream
from .render import SparseVoxelScene
from .representations import StackedFrame


class FormatError(ValueError):
    """Malformed file; the message carries the byte offset of the problem."""


# ---------------------------------------------------------------- PFM / PPM


def write_pfm(path, data: np.ndarray):
    """Little-endian PFM (scale -1). Rows are stored bottom-to-top."""
    data = np.asarray(data, dtype="<f4")
    if data.ndim == 2:
        header = "Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        header = "PF"
    else:
        raise ValueError("PFM holds (H, W) or (H, W, 3) arrays")
    h, w = data.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"{header}\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(data[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    lines = raw.split(b"\n", 3)
    if len(lines) < 4 or lines[0] not in (b"PF", b"Pf"):
        raise FormatError(f"{path}: offset 0: not a PFM file")
    channels = 3 if lines[0] == b"PF" else 1
    try:
        w, h = (int(v) for v in lines[1].split())
        scale = float(lines[2])
    except ValueError as exc:
        raise FormatError(f"{path}: bad PFM header") from exc
    offset = len(raw) - len(lines[3])
    dtype = "<f4" if scale < 0 else ">f4"
    need = w * h * channels * 4
    if len(lines[3]) != need:
        raise FormatError(f"{path}: offset {offset}: expected {need} data bytes, found {len(lines[3])}")
    data = np.frombuffer(lines[3], dtype=dtype).reshape((h, w, channels) if channels == 3 else (h, w))
    return data[::-1].astype(np.float32)


def write_ppm(path, rgb: np.ndarray):
    """8-bit binary PPM from an (H, W, 3) image in [0, 1]."""
    rgb = np.asarray(rgb, dtype=np.float64)
    q = np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)
    h, w = q.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(q.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    parts = raw.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P6":
        raise FormatError(f"{path}: offset 0: not a binary PPM")
    w, h = int(parts[1]), int(parts[2])
    body = raw[len(raw) - w * h * 3 :]
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).astype(np.float64) / 255.0


# ---------------------------------------------------------------- SVXL

SVXL_MAGIC = b"SVXL"
_SVXL_HEADER = struct.Struct("<4sQ")


def write_scene(path, scene: SparseVoxelScene):
    rec = np.empty((len(scene), 8), dtype="<f4")
    rec[:, 0:3] = scene.centers
    rec[:, 3] = scene.sizes
    rec[:, 4] = scene.alphas
    rec[:, 5:8] = scene.colors
    with open(path, "wb") as fh:
        fh.write(_SVXL_HEADER.pack(SVXL_MAGIC, len(scene)))
        fh.write(rec.tobytes())


def read_scene(path) -> SparseVoxelScene:
    raw = Path(path).read_bytes()
    if len(raw) < _SVXL_HEADER.size:
        raise FormatError(f"{path}: offset 0: truncated SVXL header")
    magic, n = _SVXL_HEADER.unpack_from(raw)
    if magic != SVXL_MAGIC:
        raise FormatError(f"{path}: offset 0: bad magic {magic!r}")
    need = _SVXL_HEADER.size + n * 32
    if len(raw) != need:
        raise FormatError(f"{path}: offset {min(len(raw), need)}: expected {need} bytes for {n} voxels, found {len(raw)}")
    rec = np.frombuffer(raw, dtype="<f4", offset=_SVXL_HEADER.size).reshape(n, 8).astype(np.float64)
    return SparseVoxelScene(rec[:, 0:3], rec[:, 3], rec[:, 4], rec[:, 5:8])


# ---------------------------------------------------------------- EVT1

EVT1_MAGIC = b"EVT1"
_EVT1_HEADER = struct.Struct("<4sHHQQQ")
EVT1_RECORD = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1"), ("pad", "u1", (3,))])
assert EVT1_RECORD.itemsize == 16


def write_events(path, stream: EventStream):
    rec = np.zeros(len(stream), dtype=EVT1_RECORD)
    for name in ("t", "x", "y", "p"):
        rec[name] = stream.events[name]
    with open(path, "wb") as fh:
        fh.write(_EVT1_HEADER.pack(EVT1_MAGIC, stream.width, stream.height, len(stream), stream.t_begin, stream.t_end))
        fh.write(rec.tobytes())


def read_events(path) -> EventStream:
    raw = Path(path).read_bytes()
    if len(raw) < _EVT1_HEADER.size:
        raise FormatError(f"{path}: offset {len(raw)}: truncated EVT1 header ({_EVT1_HEADER.size} bytes expected)")
    magic, w, h, n, t0, t1 = _EVT1_HEADER.unpack_from(raw)
    if magic != EVT1_MAGIC:
        raise FormatError(f"{path}: offset 0: bad magic {magic!r}")
    need = _EVT1_HEADER.size + n * EVT1_RECORD.itemsize
    if len(raw) != need:
        raise FormatError(
            f"{path}: offset {min(len(raw), need)}: header declares {n} events ({need} bytes), file has {len(raw)} bytes"
        )
    rec = np.frombuffer(raw, dtype=EVT1_RECORD, offset=_EVT1_HEADER.size)
    ev = np.zeros(n, dtype=EVENT_DTYPE)
    for name in ("t", "x", "y", "p"):
        ev[name] = rec[name]
    return EventStream(ev, w, h, t0, t1)


# ---------------------------------------------------------------- STK1

STK1_MAGIC = b"STK1"
_STK1_HEADER = struct.Struct("<4sIII")


def write_stack(path, frame: StackedFrame):
    """Header H, W, C (u32) then C float32 planes of H*W values."""
    data = np.asarray(frame.data, dtype="<f4")
    h, w, c = data.shape
    with open(path, "wb") as fh:
        fh.write(_STK1_HEADER.pack(STK1_MAGIC, h, w, c))
        fh.write(np.ascontiguousarray(np.moveaxis(data, 2, 0)).tobytes())


def read_stack(path) -> StackedFrame:
    raw = Path(path).read_bytes()
    if len(raw) < _STK1_HEADER.size:
        raise FormatError(f"{path}: offset {len(raw)}: truncated STK1 header")
    magic, h, w, c = _STK1_HEADER.unpack_from(raw)
    if magic != STK1_MAGIC:
        raise FormatError(f"{path}: offset 0: bad magic {magic!r}")
    need = _STK1_HEADER.size + h * w * c * 4
    if len(raw) != need:
        raise FormatError(f"{path}: offset {min(len(raw), need)}: expected {need} bytes, found {len(raw)}")
    planes = np.frombuffer(raw, dtype="<f4", offset=_STK1_HEADER.size).reshape(c, h, w)
    return StackedFrame(np.moveaxis(planes, 0, 2).astype(np.float32))


def write_stack_planes(prefix, frame: StackedFrame) -> list[Path]:
    """One PFM per channel, named ``<prefix>_c<k>.pfm``."""
    paths = []
    for k in range(frame.data.shape[2]):
        p = Path(f"{prefix}_c{k}.pfm")
        write_pfm(p, frame.data[..., k])
        paths.append(p)
    return paths
