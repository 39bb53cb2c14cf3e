"""Forward alpha compositing over a sparse voxel scene.

Rays are cast through pixel centers; every voxel a ray intersects becomes one
compositing sample whose depth is the camera-frame z of the ray's entry point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import SENTINEL, CameraModel, Pose, backproject, project, transform

EARLY_STOP_T = 1e-4
_NEAR = 1e-6
_CHUNK_PAIRS = 4_000_000


@dataclass(frozen=True)
class SparseVoxelScene:
    centers: np.ndarray  # (N, 3) meters
    sizes: np.ndarray  # (N,) edge length, meters
    alphas: np.ndarray  # (N,)
    colors: np.ndarray  # (N, 3)

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=np.float64).reshape(-1, 3)
        s = np.asarray(self.sizes, dtype=np.float64).reshape(-1)
        a = np.asarray(self.alphas, dtype=np.float64).reshape(-1)
        rgb = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        n = len(c)
        if not (len(s) == len(a) == len(rgb) == n):
            raise ValueError("voxel attribute arrays differ in length")
        if np.any(~(s > 0)):
            raise ValueError("voxel sizes must be positive")
        if np.any((a < 0) | (a > 1)) or np.any((rgb < 0) | (rgb > 1)):
            raise ValueError("opacities and colors must lie in [0, 1]")
        for name, arr in (("centers", c), ("sizes", s), ("alphas", a), ("colors", rgb)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return len(self.sizes)

    @classmethod
    def empty(cls) -> SparseVoxelScene:
        return cls(np.zeros((0, 3)), np.zeros(0), np.zeros(0), np.zeros((0, 3)))

    @classmethod
    def concat(cls, scenes: list[SparseVoxelScene]) -> SparseVoxelScene:
        return cls(
            np.concatenate([s.centers for s in scenes]),
            np.concatenate([s.sizes for s in scenes]),
            np.concatenate([s.alphas for s in scenes]),
            np.concatenate([s.colors for s in scenes]),
        )


@dataclass
class RenderOutput:
    color: np.ndarray  # (H, W, 3)
    depth: np.ndarray  # (H, W), NaN where no voxel was hit
    conf_ao: np.ndarray
    conf_vsize: np.ndarray
    transmittance: np.ndarray  # residual transmittance after the last sample
    weight_sum: np.ndarray  # sum_i T_i alpha_i
    size_sum: np.ndarray  # sum_i T_i s_i, before normalization
    ao_sum: np.ndarray  # sum_i T_i alpha_i^2, before normalization
    hits: np.ndarray  # number of voxels intersected per pixel

    @property
    def valid(self) -> np.ndarray:
        return self.hits > 0


def minmax_norm(x: np.ndarray, valid: np.ndarray | None = None) -> np.ndarray:
    """(x - min) / (max - min) over ``valid`` pixels; constant input and invalid pixels give 0."""
    x = np.asarray(x, dtype=np.float64)
    if valid is None:
        valid = np.isfinite(x)
    out = np.zeros_like(x)
    if not valid.any():
        return out
    lo, hi = x[valid].min(), x[valid].max()
    if hi - lo <= 0:
        return out
    out[valid] = (x[valid] - lo) / (hi - lo)
    return out


def _screen_boxes(centers_cam, half, cam):
    """Pixel-index bounding boxes of each voxel's projection, clipped to the image."""
    offs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=np.float64)
    corners = centers_cam[:, None, :] + offs[None] * half[:, None, None]
    z = corners[..., 2]
    front = z.min(axis=1) > _NEAR
    zc = np.where(z > _NEAR, z, 1.0)
    u = cam.fx * corners[..., 0] / zc + cam.cx
    v = cam.fy * corners[..., 1] / zc + cam.cy
    u0 = np.where(front, np.floor(u.min(axis=1)), 0)
    u1 = np.where(front, np.ceil(u.max(axis=1)), cam.width - 1)
    v0 = np.where(front, np.floor(v.min(axis=1)), 0)
    v1 = np.where(front, np.ceil(v.max(axis=1)), cam.height - 1)
    u0 = np.clip(u0, 0, cam.width - 1).astype(np.int64)
    u1 = np.clip(u1, 0, cam.width - 1).astype(np.int64)
    v0 = np.clip(v0, 0, cam.height - 1).astype(np.int64)
    v1 = np.clip(v1, 0, cam.height - 1).astype(np.int64)
    # Voxels entirely behind the camera or off-screen get an empty box.
    behind = z.max(axis=1) <= _NEAR
    offscreen = front & (
        (u.max(axis=1) < -0.5) | (u.min(axis=1) > cam.width - 0.5)
        | (v.max(axis=1) < -0.5) | (v.min(axis=1) > cam.height - 0.5)
    )
    empty = behind | offscreen
    u1 = np.where(empty, u0 - 1, u1)
    return u0, u1, v0, v1


def _candidate_pairs(u0, u1, v0, v1, width):
    """Expand per-voxel pixel boxes into (voxel index, flat pixel index) pairs."""
    bw = np.maximum(u1 - u0 + 1, 0)
    bh = np.maximum(v1 - v0 + 1, 0)
    counts = bw * bh
    vox = np.repeat(np.arange(len(counts)), counts)
    if len(vox) == 0:
        return vox, vox
    starts = np.cumsum(counts) - counts
    local = np.arange(len(vox)) - starts[vox]
    du = local % bw[vox]
    dv = local // bw[vox]
    pix = (v0[vox] + dv) * width + (u0[vox] + du)
    return vox, pix


def _ray_box_hits(origins, dirs, centers, half):
    """Slab test; returns (hit mask, entry parameter)."""
    lo = centers - half[:, None]
    hi = centers + half[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t1 = (lo - origins) * inv
        t2 = (hi - origins) * inv
    # Axis-parallel rays: inside the slab -> unbounded, outside -> miss.
    par = dirs == 0
    inside = (origins >= lo) & (origins <= hi)
    t1 = np.where(par, np.where(inside, -np.inf, np.inf), t1)
    t2 = np.where(par, np.where(inside, np.inf, -np.inf), t2)
    tmin = np.minimum(t1, t2).max(axis=1)
    tmax = np.maximum(t1, t2).min(axis=1)
    entry = np.maximum(tmin, 0.0)
    hit = (tmax >= entry) & (tmax > 0)
    return hit, entry


def render(scene: SparseVoxelScene, pose: Pose, cam: CameraModel) -> RenderOutput:
    """Composite ``scene`` as seen from camera-to-world ``pose``.

    Per pixel, with samples sorted by ray entry: I = sum T_i a_i c_i,
    Z = sum T_i a_i z_i, T_i = prod_{j<i} (1 - a_j). Confidences are
    C_AO = norm(sum T_i a_i^2) and C_Vsize = norm(sum T_i s_i) * norm(sum T_i a_i),
    min-max normalized over pixels hit by at least one voxel.
    """
    H, W = cam.height, cam.width
    npix = H * W
    color = np.zeros((npix, 3))
    depth = np.zeros(npix)
    wsum = np.zeros(npix)
    ssum = np.zeros(npix)
    aosum = np.zeros(npix)
    trans = np.ones(npix)
    hits = np.zeros(npix, dtype=np.int64)

    if len(scene):
        world_to_cam = pose.inverse()
        centers_cam = transform(world_to_cam, scene.centers)
        # Axis-aligned in the world, voxels are oriented boxes in the camera frame; the
        # circumscribed cube (half * sqrt(3)) bounds their projection.
        half = scene.sizes / 2.0
        u0, u1, v0, v1 = _screen_boxes(centers_cam, half * np.sqrt(3.0), cam)
        vox, pix = _candidate_pairs(u0, u1, v0, v1, W)

        u, v = cam.pixel_grid()
        rays_cam = np.stack([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, np.ones_like(u)], axis=-1).reshape(-1, 3)
        rays_world = rays_cam @ pose.rotation.T
        origin = pose.translation

        hv, hp, he = [], [], []
        for s in range(0, len(vox), _CHUNK_PAIRS):
            cv, cp = vox[s : s + _CHUNK_PAIRS], pix[s : s + _CHUNK_PAIRS]
            ok, entry = _ray_box_hits(origin[None, :], rays_world[cp], scene.centers[cv], half[cv])
            hv.append(cv[ok])
            hp.append(cp[ok])
            he.append(entry[ok])
        if hv:
            hv, hp, he = np.concatenate(hv), np.concatenate(hp), np.concatenate(he)
        else:
            hv = hp = np.zeros(0, dtype=np.int64)
            he = np.zeros(0)

        # Sort by pixel, then entry; ties by voxel index for determinism.
        order = np.lexsort((hv, he, hp))
        hv, hp, he = hv[order], hp[order], he[order]
        np.add.at(hits, hp, 1)
        if len(hp):
            starts = np.r_[0, np.flatnonzero(np.diff(hp)) + 1]
            seg = np.repeat(starts, np.diff(np.r_[starts, len(hp)]))
            rank = np.arange(len(hp)) - seg
            # rays_cam has unit z, so the entry parameter is the camera-frame depth.
            zs = he
            for k in range(int(rank.max()) + 1):
                sel = rank == k
                p = hp[sel]
                live = trans[p] >= EARLY_STOP_T
                p = p[live]
                i = hv[sel][live]
                a = scene.alphas[i]
                w = trans[p] * a
                color[p] += w[:, None] * scene.colors[i]
                depth[p] += w * zs[sel][live]
                wsum[p] += w
                aosum[p] += w * a
                ssum[p] += trans[p] * scene.sizes[i]
                trans[p] *= 1.0 - a

    valid = hits > 0
    depth = np.where(valid, depth, SENTINEL)
    shape = (H, W)
    valid2 = valid.reshape(shape)
    conf_ao = minmax_norm(aosum.reshape(shape), valid2)
    conf_vsize = minmax_norm(ssum.reshape(shape), valid2) * minmax_norm(wsum.reshape(shape), valid2)
    return RenderOutput(
        color=color.reshape(H, W, 3),
        depth=depth.reshape(shape),
        conf_ao=conf_ao,
        conf_vsize=conf_vsize,
        transmittance=trans.reshape(shape),
        weight_sum=wsum.reshape(shape),
        size_sum=ssum.reshape(shape),
        ao_sum=aosum.reshape(shape),
        hits=hits.reshape(shape),
    )


def invert_size_confidence(out: RenderOutput) -> np.ndarray:
    """C_Vsize variant with the size term flipped, (1 - norm(sum T s)) * norm(sum T a)."""
    valid = out.valid
    size_term = np.where(valid, 1.0 - minmax_norm(out.size_sum, valid), 0.0)
    return size_term * minmax_norm(out.weight_sum, valid)


def flow_from_depth(z: np.ndarray, rel: Pose, cam: CameraModel) -> np.ndarray:
    """Per-pixel displacement (H, W, 2) induced by the relative motion ``rel``.

    ``rel`` maps points from the first camera frame to the second. Invalid depth
    and points landing behind the second camera yield NaN.
    """
    z = np.asarray(z, dtype=np.float64)
    u, v = cam.pixel_grid()
    flow = np.full(z.shape + (2,), SENTINEL)
    ok = np.isfinite(z) & (z > 0)
    if not ok.any():
        return flow
    pix = np.stack([u[ok], v[ok]], axis=-1)
    p2 = transform(rel, backproject(pix, z[ok], cam))
    front = p2[:, 2] > _NEAR
    proj = project(p2[front], cam)
    f = np.full((len(pix), 2), SENTINEL)
    f[front] = proj[:, :2] - pix[front]
    flow[ok] = f
    return flow


@dataclass(frozen=True)
class SceneSpec:
    kind: str = "wall"  # wall | staircase | random-boxes
    seed: int = 0
    extent: float = 4.0
    depths: tuple[float, ...] = (2.0,)
    voxel_size: float = 0.05
    checker: int = 2  # voxels per checkerboard cell
    boxes: int = 8


def _slab(x0, x1, y0, y1, depth, size, checker, colors=((0.2, 0.2, 0.2), (0.8, 0.8, 0.8))):
    nx = max(int(round((x1 - x0) / size)), 1)
    ny = max(int(round((y1 - y0) / size)), 1)
    ix, iy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
    ix, iy = ix.ravel(), iy.ravel()
    centers = np.stack([x0 + (ix + 0.5) * size, y0 + (iy + 0.5) * size, np.full(ix.shape, depth + size / 2)], axis=-1)
    parity = ((ix // checker) + (iy // checker)) % 2
    rgb = np.asarray(colors, dtype=np.float64)[parity]
    n = len(centers)
    return SparseVoxelScene(centers, np.full(n, size), np.ones(n), rgb)


def make_test_scene(spec: SceneSpec) -> SparseVoxelScene:
    """Deterministic procedural scene in front of a camera at the origin looking along +z.

    wall: one opaque checkerboard slab whose front face sits at ``depths[0]``,
    ``extent`` meters wide and tall. staircase: one slab per depth, side by side
    in viewing angle. random-boxes: ``boxes`` seeded voxel blocks with opacity
    in [0.3, 1] inside an ``extent``-sized cube.
    """
    if not spec.extent > 0:
        raise ValueError("extent must be positive")
    if not spec.voxel_size > 0:
        raise ValueError("voxel_size must be positive")
    if spec.kind == "wall":
        h = spec.extent / 2
        # Irrational sub-voxel offset: pixel-center rays of typical rigs never land on voxel faces.
        o = spec.voxel_size / np.pi
        return _slab(-h + o, h + o, -h + o, h + o, spec.depths[0], spec.voxel_size, spec.checker)
    if spec.kind == "staircase":
        depths = list(spec.depths)
        k = len(depths)
        # Partition the horizontal tangent range [-e, e] with e measured at 1 m.
        e = spec.extent / 2
        edges = np.linspace(-e, e, k + 1)
        parts = []
        for i, d in enumerate(depths):
            parts.append(_slab(edges[i] * d, edges[i + 1] * d, -e * d, e * d, d, spec.voxel_size, spec.checker))
        return SparseVoxelScene.concat(parts)
    if spec.kind == "random-boxes":
        rng = np.random.default_rng(spec.seed)
        parts = []
        for _ in range(spec.boxes):
            size = spec.voxel_size * rng.uniform(0.5, 2.0)
            n = rng.integers(1, 5, size=3)
            corner = rng.uniform([-0.5, -0.5, 0.5], [0.5, 0.5, 1.5]) * spec.extent
            ix, iy, iz = np.meshgrid(np.arange(n[0]), np.arange(n[1]), np.arange(n[2]), indexing="ij")
            idx = np.stack([ix.ravel(), iy.ravel(), iz.ravel()], axis=-1)
            centers = corner + (idx + 0.5) * size
            m = len(centers)
            parts.append(SparseVoxelScene(
                centers,
                np.full(m, size),
                rng.uniform(0.3, 1.0, size=m),
                rng.uniform(0.0, 1.0, size=(m, 3)),
            ))
        return SparseVoxelScene.concat(parts)
    raise ValueError(f"unknown scene kind {spec.kind!r}")
