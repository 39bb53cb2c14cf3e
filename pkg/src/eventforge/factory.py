"""Dataset generation, validation, label distillation, evaluation and encoding runs."""

from __future__ import annotations

import csv
import io as _io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from .config import FactoryConfig
from .distill import RigPair, reproject_labels
from .events import simulate_stereo
from .geometry import StereoRig
from .metrics import depth_image_metrics, disparity_metrics, json_line, psnr_from_mse
from .render import SparseVoxelScene, make_test_scene
from .representations import tencode, voxel_grid
from .trajectory import alpha_shape_path, fit_global_trajectory, load_poses, local_trajectory

logger = logging.getLogger(__name__)

MANIFEST = "manifest.csv"
MANIFEST_COLUMNS = (
    "sample", "index", "baseline", "seed", "tau_begin", "tau_end", "t_span_us", "dtau",
    "events_left", "events_right", "levels", "files",
)
EVAL_COLUMNS = ("pair", "pred", "gt", "valid", "mae", "pe1", "pe2", "pe3")


class DataError(Exception):
    """Bad input data (exit code 2)."""


class InvariantError(Exception):
    """A generated artifact failed validation (exit code 3)."""


def build_scene(cfg: FactoryConfig) -> SparseVoxelScene:
    if cfg.scene.file is not None:
        return io.read_scene(cfg.scene.file)
    return make_test_scene(cfg.scene.spec)


def build_trajectory(cfg: FactoryConfig):
    t = cfg.trajectory
    if t.kind == "local":
        return local_trajectory(t.base, t.axis)
    poses = load_poses(t.poses)
    if t.alpha_path:
        poses = alpha_shape_path(poses, t.alpha)
    return fit_global_trajectory(poses, t.subset_stride, t.orientation, t.z_percentiles)


def sample_name(index: int, baseline: float) -> str:
    return f"sample_{index:04d}_b{baseline:.3f}"


def _sample_seed(cfg: FactoryConfig, index: int, bi: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([cfg.seed, index, bi]))


def _write_calib(path: Path, rig: StereoRig):
    c = rig.camera
    path.write_text(
        "[rig]\n"
        f"width = {c.width}\nheight = {c.height}\n"
        f"fx = {c.fx!r}\nfy = {c.fy!r}\ncx = {c.cx!r}\ncy = {c.cy!r}\n"
        f"baseline = {rig.baseline!r}\n"
    )


def generate_sample(cfg: FactoryConfig, index: int, bi: int, scene=None, traj=None) -> dict:
    """Simulate and write one (sample, baseline) directory; returns its manifest row."""
    scene = scene if scene is not None else build_scene(cfg)
    traj = traj if traj is not None else build_trajectory(cfg)
    baseline = cfg.baselines[bi]
    rig = StereoRig(cfg.camera, baseline)
    tau0, tau1 = index / cfg.samples, (index + 1) / cfg.samples
    res = simulate_stereo(
        scene, traj, rig, cfg.dtau, cfg.t_span_us,
        thresholds=cfg.thresholds, caps=cfg.caps, tau_range=(tau0, tau1),
        rng=_sample_seed(cfg, index, bi), invert_size_term=cfg.invert_size_term,
    )
    name = sample_name(index, baseline)
    d = Path(cfg.out_dir) / name
    d.mkdir(parents=True, exist_ok=True)
    kf = res.keyframes[-1]
    files = {
        "events_left.evt": lambda p: io.write_events(p, res.left),
        "events_right.evt": lambda p: io.write_events(p, res.right),
        "depth.pfm": lambda p: io.write_pfm(p, kf.depth),
        "disparity.pfm": lambda p: io.write_pfm(p, kf.disparity),
        "conf_ao.pfm": lambda p: io.write_pfm(p, kf.conf_ao),
        "conf_vsize.pfm": lambda p: io.write_pfm(p, kf.conf_vsize),
        "image_ll.ppm": lambda p: io.write_ppm(p, kf.image_ll),
        "image_l.ppm": lambda p: io.write_ppm(p, kf.image_l),
        "image_r.ppm": lambda p: io.write_ppm(p, kf.image_r),
        "calib.cfg": lambda p: _write_calib(p, rig),
    }
    if cfg.tencode_count > 0:
        files["tencode_left.stk"] = lambda p: io.write_stack(p, tencode(res.left, cfg.tencode_count))
        files["tencode_right.stk"] = lambda p: io.write_stack(p, tencode(res.right, cfg.tencode_count))
    if cfg.voxel_bins > 0:
        files["voxelgrid_left.stk"] = lambda p: io.write_stack(p, voxel_grid(res.left, cfg.voxel_bins))
        files["voxelgrid_right.stk"] = lambda p: io.write_stack(p, voxel_grid(res.right, cfg.voxel_bins))
    for fname, writer in files.items():
        writer(d / fname)
    logger.info("%s: %d/%d events, levels %s", name, len(res.left), len(res.right), res.levels)
    return {
        "sample": name,
        "index": index,
        "baseline": repr(baseline),
        "seed": cfg.seed,
        "tau_begin": repr(tau0),
        "tau_end": repr(tau1),
        "t_span_us": cfg.t_span_us,
        "dtau": repr(cfg.dtau),
        "events_left": len(res.left),
        "events_right": len(res.right),
        "levels": " ".join(str(n) for n in res.levels),
        "files": ";".join(f"{name}/{f}" for f in sorted(files)),
    }


def _worker(args):
    cfg, index, bi = args
    return generate_sample(cfg, index, bi)


def generate_dataset(cfg: FactoryConfig, workers: int = 1) -> Path:
    """Write every (sample, baseline) directory plus ``manifest.csv`` under ``cfg.out_dir``."""
    out = Path(cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise DataError(f"output directory {out} is not writable: {exc}") from exc
    jobs = [(cfg, k, bi) for k in range(cfg.samples) for bi in range(len(cfg.baselines))]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_worker, jobs))
    else:
        scene, traj = build_scene(cfg), build_trajectory(cfg)
        rows = [generate_sample(cfg, k, bi, scene, traj) for _, k, bi in jobs]
    # Single writer, rows in job order, so the manifest is identical for any worker count.
    with open(out / MANIFEST, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=MANIFEST_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return out


def validate_dataset(root) -> list[str]:
    """Check every sample and the manifest. Returns human-readable problems."""
    root = Path(root)
    problems = []
    mpath = root / MANIFEST
    if not mpath.exists():
        return [f"{mpath}: missing manifest"]
    with open(mpath, newline="") as fh:
        rows = list(csv.DictReader(fh))
    listed = set()
    for row in rows:
        files = [f for f in row["files"].split(";") if f]
        listed.update(files)
        sdir = root / row["sample"]
        missing = [f for f in files if not (root / f).exists()]
        if missing:
            problems.append(f"{row['sample']}: missing files {missing}")
            continue
        problems += [f"{row['sample']}: {p}" for p in _validate_sample(sdir, row)]
    on_disk = {str(p.relative_to(root)) for p in root.rglob("*") if p.is_file() and p.name != MANIFEST}
    for f in sorted(on_disk - listed):
        problems.append(f"{f}: on disk but not in manifest")
    for f in sorted(listed - on_disk):
        problems.append(f"{f}: in manifest but not on disk")
    return problems


def _validate_sample(sdir: Path, row: dict) -> list[str]:
    from .config import _Reader

    problems = []
    for eye in ("left", "right"):
        try:
            stream = io.read_events(sdir / f"events_{eye}.evt")
        except io.FormatError as exc:
            problems.append(str(exc))
            continue
        problems += [f"events_{eye}: {p}" for p in stream.check()]
        if str(len(stream)) != row[f"events_{eye}"]:
            problems.append(f"events_{eye}: count {len(stream)} differs from manifest")
    calib = _Reader((sdir / "calib.cfg").read_text(), str(sdir / "calib.cfg"))
    bf = calib.get("rig", "baseline", float) * calib.get("rig", "fx", float)
    depth = io.read_pfm(sdir / "depth.pfm").astype(np.float64)
    disp = io.read_pfm(sdir / "disparity.pfm").astype(np.float64)
    if np.any(np.isfinite(depth) != np.isfinite(disp)):
        problems.append("depth and disparity validity masks differ")
    ok = np.isfinite(depth) & np.isfinite(disp)
    if ok.any():
        err = np.abs(bf / depth[ok] - disp[ok]) / np.maximum(disp[ok], 1.0)
        if err.max() > 1e-5:
            problems.append(f"depth/disparity round trip off by {err.max():.3g} (relative)")
    for name in ("conf_ao", "conf_vsize"):
        c = io.read_pfm(sdir / f"{name}.pfm")
        if not np.all(np.isfinite(c)) or c.min() < 0 or c.max() > 1:
            problems.append(f"{name} outside [0, 1]")
    return problems


# ---------------------------------------------------------------- distill / eval / encode


@dataclass
class FileStatus:
    path: Path
    ok: bool
    message: str = ""


def distill_files(inputs, rigs: RigPair, clip, out_dir) -> list[FileStatus]:
    """Reproject each disparity PFM onto the event camera; failures are isolated per file."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    status = []
    for src in map(Path, inputs):
        try:
            d = io.read_pfm(src)
            d_e = reproject_labels(d, rigs, clip)
            dst = out_dir / src.name
            io.write_pfm(dst, d_e)
            status.append(FileStatus(src, True, f"{int(np.isfinite(d_e).sum())} labeled pixels -> {dst}"))
        except (OSError, ValueError) as exc:
            status.append(FileStatus(src, False, str(exc)))
    return status


def evaluate_disparity(preds, gts) -> tuple[list[dict], dict]:
    preds, gts = list(preds), list(gts)
    if len(preds) != len(gts):
        raise DataError(f"unpaired file lists: {len(preds)} predictions vs {len(gts)} references")
    rows = []
    err_sum = 0.0
    bad = [0, 0, 0]
    total = 0
    for i, (p, g) in enumerate(zip(preds, gts)):
        dp, dg = io.read_pfm(p).astype(np.float64), io.read_pfm(g).astype(np.float64)
        m = disparity_metrics(dp, dg)
        rows.append({"pair": i, "pred": str(p), "gt": str(g), **m})
        n = m["valid"]
        if n:
            err_sum += m["mae"] * n
            for k in range(3):
                bad[k] += m[f"pe{k + 1}"] * n / 100.0
            total += n
    if total:
        agg = {"mae": err_sum / total, "pe1": 100 * bad[0] / total, "pe2": 100 * bad[1] / total, "pe3": 100 * bad[2] / total, "valid": total}
    else:
        agg = {"mae": math.nan, "pe1": math.nan, "pe2": math.nan, "pe3": math.nan, "valid": 0}
    return rows, agg


def evaluate_depth(preds, gts, pred_images, gt_images) -> tuple[list[dict], dict]:
    lists = [list(x) for x in (preds, gts, pred_images, gt_images)]
    if len({len(x) for x in lists}) != 1:
        raise DataError("depth evaluation needs equally long pred/gt/image lists")
    rows = []
    for i, (p, g, ip, ig) in enumerate(zip(*lists)):
        m = depth_image_metrics(io.read_pfm(p), io.read_pfm(g), _read_image(ip), _read_image(ig))
        rows.append({"pair": i, "pred": str(p), "gt": str(g), **m})
    agg = {}
    for key in ("mae", "delta125", "ssim"):
        vals = [r[key] for r in rows if not math.isnan(r[key])]
        agg[key] = float(np.mean(vals)) if vals else math.nan
    # Average PSNR in the MSE domain so identical pairs do not swamp the mean.
    mses = [10 ** (-r["psnr"] / 10) if math.isfinite(r["psnr"]) else 0.0 for r in rows]
    agg["psnr"] = psnr_from_mse(float(np.mean(mses))) if mses else math.nan
    return rows, agg


def _read_image(path):
    path = Path(path)
    return io.read_ppm(path) if path.suffix.lower() == ".ppm" else io.read_pfm(path)


def metrics_csv(rows: list[dict], agg: dict, columns) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c, "")) for c in columns])
    w.writerow([_cell({"pair": "all", "pred": "", "gt": ""}.get(c, agg.get(c, ""))) for c in columns])
    return buf.getvalue()


def _cell(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6f}"
    return v


def metrics_jsonl(rows: list[dict]) -> str:
    return "\n".join(json_line(r, pair=r["pair"]) for r in rows)


def encode_file(src, dst, representation: str, count: int = 0, bins: int = 0, fmt: str = "stk"):
    stream = io.read_events(src)
    if representation == "tencode":
        frame = tencode(stream, count)
    elif representation == "voxel":
        frame = voxel_grid(stream, bins)
    else:
        raise ValueError(f"unknown representation {representation!r}")
    if fmt == "stk":
        io.write_stack(dst, frame)
        return frame, [Path(dst)]
    return frame, io.write_stack_planes(dst, frame)
