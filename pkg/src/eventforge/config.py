"""Factory configuration: bracketed sections of ``key = value`` lines."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .distill import DEFAULT_CLIP, RigPair
from .geometry import CameraModel, GeometryError, Pose, StereoRig, reorthogonalize
from .render import SceneSpec


class ConfigError(ValueError):
    pass


@dataclass
class SceneConfig:
    spec: SceneSpec | None = None
    file: Path | None = None


@dataclass
class TrajectoryConfig:
    kind: str = "local"
    axis: tuple[float, float, float] = (1.0, 0.0, 0.0)
    base: Pose = field(default_factory=Pose.identity)
    poses: Path | None = None
    subset_stride: int | None = None
    orientation: str = "from_splines"
    alpha_path: bool = False
    alpha: float | None = None
    z_percentiles: tuple[float, float] | None = (45.0, 55.0)


@dataclass
class FactoryConfig:
    scene: SceneConfig
    trajectory: TrajectoryConfig
    camera: CameraModel
    baselines: tuple[float, ...]
    samples: int
    dtau: float = 0.03
    t_span_us: int = 50_000
    thresholds: tuple[float, float] = (0.15, 0.25)
    caps: tuple[int, int] = (650_000, 650_000)
    seed: int = 0
    out_dir: Path = Path("out")
    tencode_count: int = 0
    voxel_bins: int = 0
    mu: float = 0.75
    invert_size_term: bool = False
    source: str = "<memory>"

    def rigs(self) -> list[StereoRig]:
        return [StereoRig(self.camera, b) for b in self.baselines]


class _Reader:
    """Typed access to a parsed config with ``file:line`` error messages."""

    def __init__(self, text: str, source: str, overrides: dict[str, str] | None = None):
        self.source = source
        self.parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
        try:
            self.parser.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
        self.lines: dict[tuple[str, str], int] = {}
        section = None
        for lineno, raw in enumerate(text.splitlines(), 1):
            s = raw.strip()
            if s.startswith("[") and s.endswith("]"):
                section = s[1:-1].strip()
            elif section and "=" in s and not s.startswith(("#", ";")):
                self.lines[(section, s.split("=", 1)[0].strip().lower())] = lineno
        for dotted, value in (overrides or {}).items():
            if "." not in dotted:
                raise ConfigError(f"override {dotted!r} must look like section.key")
            sec, key = dotted.split(".", 1)
            if not self.parser.has_section(sec):
                self.parser.add_section(sec)
            self.parser.set(sec, key, str(value))
            self.lines[(sec, key.lower())] = 0

    def where(self, section, key) -> str:
        line = self.lines.get((section, key.lower()))
        if line is None:
            return f"{self.source}: [{section}] {key}"
        if line == 0:
            return f"command line: {section}.{key}"
        return f"{self.source}:{line}: [{section}] {key}"

    def has(self, section, key) -> bool:
        return self.parser.has_option(section, key)

    def raw(self, section, key, default=None, required=False):
        if self.has(section, key):
            return self.parser.get(section, key).strip()
        if required:
            raise ConfigError(f"{self.source}: missing required key [{section}] {key}")
        return default

    def get(self, section, key, conv, default=None, required=False):
        value = self.raw(section, key, None, required)
        if value is None:
            return default
        try:
            return conv(value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{self.where(section, key)}: invalid value {value!r} ({exc})") from exc

    def fail(self, section, key, message):
        raise ConfigError(f"{self.where(section, key)}: {message}")


def _floats(value: str) -> tuple[float, ...]:
    return tuple(float(v) for v in value.replace(",", " ").split())


def _bool(value: str) -> bool:
    v = value.lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _camera(r: _Reader, section: str) -> CameraModel:
    width = r.get(section, "width", int, required=True)
    height = r.get(section, "height", int, required=True)
    fx = r.get(section, "fx", float, required=True)
    fy = r.get(section, "fy", float, fx)
    cx = r.get(section, "cx", float, (width - 1) / 2)
    cy = r.get(section, "cy", float, (height - 1) / 2)
    try:
        return CameraModel(fx, fy, cx, cy, width, height)
    except GeometryError as exc:
        raise ConfigError(f"{r.where(section, 'fx')}: {exc}") from exc


def _resolve(base: Path, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base / p


def load_factory_config(path, overrides: dict[str, str] | None = None) -> FactoryConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_factory_config(text, str(path), base_dir=path.parent, overrides=overrides)


def parse_factory_config(text: str, source: str = "<string>", base_dir=".", overrides=None) -> FactoryConfig:
    r = _Reader(text, source, overrides)
    base_dir = Path(base_dir)

    scene = SceneConfig()
    if r.has("scene", "file"):
        scene.file = _resolve(base_dir, r.raw("scene", "file"))
        if not scene.file.exists():
            r.fail("scene", "file", f"file not found: {scene.file}")
    else:
        kind = r.raw("scene", "kind", "wall")
        if kind not in ("wall", "staircase", "random-boxes"):
            r.fail("scene", "kind", f"unknown scene kind {kind!r}")
        extent = r.get("scene", "extent", float, 4.0)
        if not extent > 0:
            r.fail("scene", "extent", "must be positive")
        voxel = r.get("scene", "voxel_size", float, 0.05)
        if not voxel > 0:
            r.fail("scene", "voxel_size", "must be positive")
        scene.spec = SceneSpec(
            kind=kind,
            seed=r.get("scene", "seed", int, 0),
            extent=extent,
            depths=r.get("scene", "depths", _floats, (2.0,)),
            voxel_size=voxel,
            checker=r.get("scene", "checker", int, 2),
            boxes=r.get("scene", "boxes", int, 8),
        )

    traj = TrajectoryConfig()
    traj.kind = r.raw("trajectory", "kind", "local")
    if traj.kind == "local":
        traj.axis = r.get("trajectory", "axis", _floats, (1.0, 0.0, 0.0))
        if len(traj.axis) != 3 or not np.linalg.norm(traj.axis) > 0:
            r.fail("trajectory", "axis", "expected a non-zero 3-vector")
        if r.has("trajectory", "base"):
            vals = r.get("trajectory", "base", _floats)
            if len(vals) != 12:
                r.fail("trajectory", "base", "expected 12 values (row-major 3x4 [R|t])")
            m = np.array(vals).reshape(3, 4)
            try:
                traj.base = Pose(reorthogonalize(m[:, :3]), m[:, 3])
            except GeometryError as exc:
                r.fail("trajectory", "base", str(exc))
    elif traj.kind == "global":
        traj.poses = _resolve(base_dir, r.raw("trajectory", "poses", required=True))
        if not traj.poses.exists():
            r.fail("trajectory", "poses", f"file not found: {traj.poses}")
        traj.subset_stride = r.get("trajectory", "subset_stride", int, required=True)
        if traj.subset_stride < 1:
            r.fail("trajectory", "subset_stride", "must be >= 1")
        traj.orientation = r.raw("trajectory", "orientation", "from_splines")
        if traj.orientation not in ("from_splines", "motion_aligned"):
            r.fail("trajectory", "orientation", "expected from_splines or motion_aligned")
        traj.alpha_path = r.get("trajectory", "alpha_path", _bool, False)
        traj.alpha = r.get("trajectory", "alpha", float, None)
        zp = r.raw("trajectory", "z_percentiles", "45 55")
        traj.z_percentiles = None if zp.lower() == "none" else r.get("trajectory", "z_percentiles", _floats, (45.0, 55.0))
    else:
        r.fail("trajectory", "kind", f"unknown trajectory kind {traj.kind!r}")

    camera = _camera(r, "rig")
    baselines = r.get("rig", "baselines", _floats, required=True)
    if not baselines or any(not b > 0 for b in baselines):
        r.fail("rig", "baselines", "baselines must be positive")

    samples = r.get("simulation", "samples", int, required=True)
    if samples < 1:
        r.fail("simulation", "samples", "must be >= 1")
    dtau = r.get("simulation", "dtau", float, 0.03)
    if not 0 < dtau <= 1:
        r.fail("simulation", "dtau", "must lie in (0, 1]")
    t_span = r.get("simulation", "t_span_us", int, 50_000)
    if t_span < 1:
        r.fail("simulation", "t_span_us", "must be >= 1")
    lo = r.get("simulation", "threshold_low", float, 0.15)
    hi = r.get("simulation", "threshold_high", float, 0.25)
    if not 0 < lo <= hi:
        r.fail("simulation", "threshold_low", "need 0 < threshold_low <= threshold_high")
    caps = (r.get("simulation", "cap_left", int, 650_000), r.get("simulation", "cap_right", int, 650_000))
    for key, cap in zip(("cap_left", "cap_right"), caps):
        if cap < 1:
            r.fail("simulation", key, "must be >= 1")
    mu = r.get("confidence", "mu", float, 0.75)
    if not 0 <= mu <= 1:
        r.fail("confidence", "mu", "must lie in [0, 1]")

    return FactoryConfig(
        scene=scene,
        trajectory=traj,
        camera=camera,
        baselines=tuple(baselines),
        samples=samples,
        dtau=dtau,
        t_span_us=t_span,
        thresholds=(lo, hi),
        caps=caps,
        seed=r.get("simulation", "seed", int, 0),
        out_dir=_resolve(base_dir, r.raw("output", "dir", "out")),
        tencode_count=r.get("representation", "tencode_count", int, 0),
        voxel_bins=r.get("representation", "voxel_bins", int, 0),
        mu=mu,
        invert_size_term=r.get("confidence", "invert_size_term", _bool, False),
        source=source,
    )


@dataclass
class DistillConfig:
    rigs: RigPair
    clip: tuple[float, float] = DEFAULT_CLIP


def _rig(r: _Reader, section: str) -> StereoRig:
    cam = _camera(r, section)
    b = r.get(section, "baseline", float, required=True)
    if not b > 0:
        r.fail(section, "baseline", "must be positive")
    return StereoRig(cam, b)


def parse_distill_config(text: str, source: str = "<string>", overrides=None) -> DistillConfig:
    """Sections [rgb], [event] (camera + baseline), [extrinsic] (rotation: 9 values, translation: 3), [distill] clip."""
    r = _Reader(text, source, overrides)
    rgb, event = _rig(r, "rgb"), _rig(r, "event")
    rot = r.get("extrinsic", "rotation", _floats, (1, 0, 0, 0, 1, 0, 0, 0, 1))
    trans = r.get("extrinsic", "translation", _floats, (0, 0, 0))
    if len(rot) != 9:
        r.fail("extrinsic", "rotation", "expected 9 values")
    if len(trans) != 3:
        r.fail("extrinsic", "translation", "expected 3 values")
    try:
        extr = Pose(reorthogonalize(np.array(rot).reshape(3, 3)), trans)
    except GeometryError as exc:
        r.fail("extrinsic", "rotation", str(exc))
    clip = r.get("distill", "clip", _floats, DEFAULT_CLIP)
    if len(clip) != 2 or not 0 <= clip[0] < clip[1]:
        r.fail("distill", "clip", "expected 'z_min z_max' with 0 <= z_min < z_max")
    return DistillConfig(RigPair(rgb, event, extr), tuple(clip))


def load_distill_config(path, overrides=None) -> DistillConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_distill_config(text, str(path), overrides)
