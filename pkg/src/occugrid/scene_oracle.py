"""Synthetic scenes and brute-force oracles.

The oracles here deliberately avoid the production code paths they check:
the ray oracle never calls the voxel traversal or the segment clipper, and
the frustum oracle re-does projection, binning and labeling with scalar
Python loops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .geometry import Calibration, Discretization, FrustumGridSpec, PointCloud, VoxelGridSpec, voxel_indices
from .labels import FREE, OCCUPIED, UNKNOWN, OccupancyLabelGrid, Space

AMBIGUOUS_BAND = 1e-7
_NEIGHBOR_OFFSETS = [np.array(o) for o in np.ndindex(3, 3, 3)]
_NEIGHBOR_OFFSETS = [o - 1 for o in _NEIGHBOR_OFFSETS if np.any(o != 1)]

# LiDAR (x fwd, y left, z up) -> camera (x right, y down, z fwd)
_LIDAR_TO_CAM_AXES = np.array([[0.0, -1.0, 0.0],
                               [0.0, 0.0, -1.0],
                               [1.0, 0.0, 0.0]])


@dataclass(frozen=True)
class Slab:
    """Axis-aligned box ``[lo, hi]``; a zero extent makes it a flat wall."""

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    density: float = 50.0  # points per square meter of surface

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        if any(h < l for l, h in zip(self.lo, self.hi)):
            raise ValueError(f"slab hi {self.hi} below lo {self.lo}")
        if not self.density > 0:
            raise ValueError("slab density must be > 0")


@dataclass(frozen=True)
class CameraPose:
    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    yaw_deg: float = 0.0  # rotation about LiDAR up axis; 0 looks along +x
    focal: float = 720.0
    image_size: tuple[int, int] = (1280, 384)  # width, height


@dataclass(frozen=True)
class SyntheticScene:
    slabs: tuple[Slab, ...] = ()
    camera: CameraPose = field(default_factory=CameraPose)
    seed: int = 0


def camera_calibration(pose: CameraPose) -> Calibration:
    w, h = pose.image_size
    intrinsic = np.array([[pose.focal, 0.0, w / 2.0, 0.0],
                          [0.0, pose.focal, h / 2.0, 0.0],
                          [0.0, 0.0, 1.0, 0.0]])
    yaw = math.radians(pose.yaw_deg)
    c, s = math.cos(yaw), math.sin(yaw)
    r_yaw = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    rot = _LIDAR_TO_CAM_AXES @ r_yaw.T
    t = np.eye(4)
    t[:3, :3] = rot
    t[:3, 3] = -rot @ np.asarray(pose.position, dtype=np.float64)
    return Calibration(intrinsic, np.eye(3), t)


def _faces(slab: Slab):
    lo, hi = np.array(slab.lo), np.array(slab.hi)
    for k in range(3):
        a, b = [j for j in range(3) if j != k]
        area = (hi[a] - lo[a]) * (hi[b] - lo[b])
        if area <= 0:
            continue
        for level in sorted({lo[k], hi[k]}):
            yield k, level, a, b, area


def _first_hit(lo, hi, origin, targets):
    """Entry parameter along origin->target of each segment into box [lo, hi] (inf if missed)."""
    d = targets - origin
    t_in = np.zeros(len(targets))
    t_out = np.ones(len(targets))
    with np.errstate(divide="ignore", invalid="ignore"):
        for k in range(3):
            par = d[:, k] == 0
            ta = (lo[k] - origin[k]) / d[:, k]
            tb = (hi[k] - origin[k]) / d[:, k]
            t_in = np.where(par, t_in, np.maximum(t_in, np.minimum(ta, tb)))
            t_out = np.where(par, t_out, np.minimum(t_out, np.maximum(ta, tb)))
            outside = par & ((origin[k] < lo[k]) | (origin[k] > hi[k]))
            t_out = np.where(outside, -1.0, t_out)
    return np.where(t_in <= t_out, t_in, np.inf)


def generate_scene(scene: SyntheticScene) -> tuple[PointCloud, Calibration]:
    """Sample points on slab surfaces, keeping only those the camera sees first."""
    rng = np.random.default_rng(scene.seed)
    cam = np.asarray(scene.camera.position, dtype=np.float64)
    chunks = []
    for slab in scene.slabs:
        for k, level, a, b, area in _faces(slab):
            n = int(round(area * slab.density))
            pts = np.empty((n, 3))
            pts[:, k] = level
            pts[:, a] = rng.uniform(slab.lo[a], slab.hi[a], n)
            pts[:, b] = rng.uniform(slab.lo[b], slab.hi[b], n)
            chunks.append(pts)
    pts = np.concatenate(chunks) if chunks else np.zeros((0, 3))

    visible = np.ones(len(pts), dtype=bool)
    for slab in scene.slabs:
        hit = _first_hit(np.array(slab.lo), np.array(slab.hi), cam, pts)
        visible &= hit >= 1.0 - 1e-9
    return PointCloud(pts[visible]), camera_calibration(scene.camera)


def default_wall_scene(seed: int = 0) -> SyntheticScene:
    """Frontal wall with ground in front of it and a box obstacle, camera at the LiDAR origin."""
    return SyntheticScene(
        slabs=(
            Slab((20.0, -10.0, -2.5), (20.5, 10.0, 0.9), density=60.0),
            Slab((2.0, -15.0, -1.7), (40.0, 15.0, -1.7), density=15.0),
            Slab((10.0, 2.0, -1.7), (12.0, 4.0, -0.2), density=80.0),
        ),
        camera=CameraPose(),
        seed=seed,
    )


def random_scene(rng: np.random.Generator, image_size=(160, 96), focal=80.0,
                 num_slabs: Optional[int] = None) -> SyntheticScene:
    """Small random scene for oracle sweeps: a few boxes and walls ahead of the camera."""
    if num_slabs is None:
        num_slabs = int(rng.integers(1, 5))
    slabs = []
    for _ in range(num_slabs):
        lo = np.array([rng.uniform(3, 30), rng.uniform(-12, 8), rng.uniform(-2.5, 0.5)])
        ext = np.array([rng.uniform(0, 4), rng.uniform(0.5, 6), rng.uniform(0.3, 2.5)])
        if rng.random() < 0.3:
            ext[0] = 0.0
        slabs.append(Slab(tuple(lo), tuple(lo + ext), density=float(rng.uniform(5, 30))))
    pose = CameraPose((0.0, 0.0, float(rng.uniform(-0.5, 0.5))), float(rng.uniform(-10, 10)),
                      focal, tuple(image_size))
    return SyntheticScene(tuple(slabs), pose, int(rng.integers(0, 2**31)))


class OracleCells(NamedTuple):
    cells: set  # cells with at least one sample clear of every face
    ambiguous: set  # cells touched only within the grazing band, or at unresolved corners


def oracle_ray_cells(spec: VoxelGridSpec, start, end, samples: int = 10_000) -> OracleCells:
    """Cells met by segment ``start -> end``, by dense sampling plus bisection.

    Samples are keyed by their cell on the unbounded lattice. A straight
    segment is monotone in every cell coordinate, so two consecutive samples
    whose keys differ by more than one step hide intermediate cells; such gaps
    are bisected until resolved or narrower than 1e-9 m, and an unresolved gap
    marks its cell neighborhood ambiguous.
    """
    if samples < 1000:
        raise ValueError("oracle needs at least 1000 samples")
    a = np.asarray(start, dtype=np.float64)
    b = np.asarray(end, dtype=np.float64)
    d = b - a
    length = float(np.linalg.norm(d))
    lo, hi = spec.origin_array, spec.upper
    size = spec.size_array
    clear_cells: set = set()
    touched: set = set()
    forced: set = set()

    def classify(ts):
        pts = a + np.outer(ts, d)
        lattice = np.floor((pts - lo) / size).astype(np.int64)
        idx, inside = voxel_indices(spec, pts)
        local = (pts - lo) / size - idx
        low_face = local * size < AMBIGUOUS_BAND
        high_face = (1.0 - local) * size < AMBIGUOUS_BAND
        near = np.any(low_face | high_face, axis=1)
        groups = [(idx[inside], touched), (idx[inside & ~near], clear_cells)]
        # a grazed face is shared by the cells on both sides of it
        g = inside & near
        for off in (_NEIGHBOR_OFFSETS if np.any(g) else ()):
            sel = g & np.all((off == 0) | ((off < 0) & low_face) | ((off > 0) & high_face), axis=1)
            if np.any(sel):
                nb = idx[sel] + off
                nb = nb[np.all((nb >= 0) & (nb < np.array(spec.dims)), axis=1)]
                groups.append((nb, touched))
        for cells, target in groups:
            if len(cells):
                # samples run along the segment, so repeats are consecutive
                change = np.ones(len(cells), dtype=bool)
                change[1:] = np.any(cells[1:] != cells[:-1], axis=1)
                target.update(map(tuple, cells[change].tolist()))
        return lattice, pts

    def box_distance(p):
        p = np.atleast_2d(p)
        return np.linalg.norm(p - np.clip(p, lo, hi), axis=1)

    def needs_split(ka, kb, pa, pb, span):
        if np.abs(np.subtract(ka, kb)).sum() <= 1:
            return False
        return min(box_distance(pa)[0], box_distance(pb)[0]) <= span

    ts = np.linspace(0.0, 1.0, samples)
    lattice, pts = classify(ts)
    if length == 0.0:
        return OracleCells(clear_cells, touched - clear_cells)

    gap = length / (samples - 1)
    jumps = np.abs(np.diff(lattice, axis=0)).sum(axis=1) > 1
    dist = box_distance(pts)
    cand = np.flatnonzero(jumps & (np.minimum(dist[:-1], dist[1:]) <= gap))
    stack = [(ts[i], tuple(lattice[i].tolist()), ts[i + 1], tuple(lattice[i + 1].tolist()))
             for i in cand]
    while stack:
        t0, k0, t1, k1 = stack.pop()
        span = (t1 - t0) * length
        if span < 1e-9:
            ranges = [range(min(x, y), max(x, y) + 1) for x, y in zip(k0, k1)]
            forced.update((x, y, z) for x in ranges[0] for y in ranges[1] for z in ranges[2])
            continue
        tm = 0.5 * (t0 + t1)
        mlat, _ = classify(np.array([tm]))
        km = tuple(mlat[0].tolist())
        for ta, ka, tb, kb in ((t0, k0, tm, km), (tm, km, t1, k1)):
            if needs_split(ka, kb, a + ta * d, a + tb * d, 0.5 * span):
                stack.append((ta, ka, tb, kb))

    dims = spec.dims
    forced = {c for c in forced if all(0 <= c[k] < dims[k] for k in range(3))}
    return OracleCells(clear_cells, (touched | forced) - clear_cells)


def traversal_matches_oracle(visited, oracle: OracleCells) -> bool:
    got = {tuple(int(v) for v in c) for c in visited} - oracle.ambiguous
    return got == oracle.cells - oracle.ambiguous


def _oracle_bin_edges(fspec: FrustumGridSpec) -> list[float]:
    n = fspec.depth_bins
    lo, hi = fspec.depth_min, fspec.depth_max
    edges = []
    for i in range(n + 1):
        if fspec.discretization is Discretization.UNIFORM:
            edges.append(lo + (hi - lo) * i / n)
        else:
            edges.append(lo + (hi - lo) * i * (i + 1) / (n * (n + 1)))
    edges[-1] = hi
    return edges


def oracle_frustum_labels(calib: Calibration, points, fspec: FrustumGridSpec) -> OccupancyLabelGrid:
    """Scalar-loop frustum labels: nearest in-range return per feature cell, then free/occupied/unknown."""
    pts = points.points if isinstance(points, PointCloud) else np.asarray(points)
    rect = calib.rect.tolist()
    ext = calib.lidar_to_cam.tolist()
    proj = calib.intrinsic.tolist()
    width, height = fspec.width * fspec.downsample, fspec.height * fspec.downsample
    s = fspec.downsample
    nearest: dict[tuple[int, int], float] = {}

    for x, y, z in pts.tolist():
        cam0 = [ext[r][0] * x + ext[r][1] * y + ext[r][2] * z + ext[r][3] for r in range(3)]
        cam = [sum(rect[r][c] * cam0[c] for c in range(3)) for r in range(3)]
        hom = [proj[r][0] * cam[0] + proj[r][1] * cam[1] + proj[r][2] * cam[2] + proj[r][3]
               for r in range(3)]
        depth = cam[2]
        if depth <= 0 or hom[2] <= 0:
            continue
        u = hom[0] / hom[2]
        v = hom[1] / hom[2]
        if not (0 <= u < width and 0 <= v < height):
            continue
        if not (fspec.depth_min <= depth < fspec.depth_max):
            continue
        cell = (int(math.floor(v)) // s, int(math.floor(u)) // s)
        if cell not in nearest or depth < nearest[cell]:
            nearest[cell] = depth

    edges = _oracle_bin_edges(fspec)
    values = np.full(fspec.shape, UNKNOWN, dtype=np.int8)
    for (row, col), depth in nearest.items():
        k = 0
        while k + 1 < fspec.depth_bins and edges[k + 1] <= depth:
            k += 1
        for dbin in range(fspec.depth_bins):
            if dbin < k:
                values[row, col, dbin] = FREE
            elif dbin == k:
                values[row, col, dbin] = OCCUPIED
    return OccupancyLabelGrid(values, Space.FRUSTUM, (0.0, 0.0, 0.0), (float(s), 0.0, 0.0))


def random_segments(rng: np.random.Generator, n: int, low: Sequence[float], high: Sequence[float]):
    """``n`` random segments with endpoints uniform in the box ``[low, high]``."""
    low = np.asarray(low, dtype=np.float64)
    high = np.asarray(high, dtype=np.float64)
    return rng.uniform(low, high, size=(n, 2, 3))
