"""3D occupancy labels: occupied from voxelized points, free from point-to-camera rays.

Free space is carved with parametric voxel stepping (Amanatides & Woo). A
voxel counts as traversed only when the open segment passes through its open
interior, so rays grazing a face, edge or corner do not mark it. When a ray
crosses an edge or a corner exactly, all tied axes are stepped at once and the
cells touched only at that edge/corner are skipped.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np

from .geometry import PointCloud, VoxelGridSpec, slab_clip, voxel_indices
from .labels import FREE, OCCUPIED, UNKNOWN, OccupancyLabelGrid, Space

# slack on the ray parameter when comparing face crossings
T_EPS = 1e-12
# grid-unit distance under which a clipped endpoint is snapped onto a face
SNAP_EPS = 1e-9

FAULT_NONE = 0
FAULT_STEP_ORDER = 1  # testing hook: choose the face crossed *last* instead of first


@dataclass(frozen=True, eq=False)
class VoxelCountGrid:
    counts: np.ndarray  # (X, Y, Z) points per voxel

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@numba.njit(cache=True, nogil=True)
def _traverse_kernel(dims, ga, gb, out, fault):
    """Write visited cells of grid-space segment ``ga -> gb`` into ``out``; return count."""
    zero = np.zeros(3)
    upper = np.empty(3)
    for k in range(3):
        upper[k] = dims[k]
    t0, t1 = slab_clip(zero, upper, ga, gb)
    if t0 > t1:
        return 0

    idx = np.empty(3, dtype=np.int64)
    step = np.zeros(3, dtype=np.int64)
    tmax = np.empty(3)
    gd = np.empty(3)
    for k in range(3):
        gd[k] = gb[k] - ga[k]
        p = ga[k] + t0 * gd[k]
        r = math.floor(p + 0.5)
        on_face = abs(p - r) < SNAP_EPS
        if on_face:
            p = r
        if gd[k] > 0.0:
            step[k] = 1
            idx[k] = int(math.floor(p))
        elif gd[k] < 0.0:
            step[k] = -1
            idx[k] = int(math.ceil(p)) - 1
        else:
            if on_face:
                # segment lies in a face plane: it meets no open interior
                return 0
            idx[k] = int(math.floor(p))
        if idx[k] < 0 or idx[k] >= dims[k]:
            return 0

    for k in range(3):
        if step[k] > 0:
            tmax[k] = (idx[k] + 1 - ga[k]) / gd[k]
        elif step[k] < 0:
            tmax[k] = (idx[k] - ga[k]) / gd[k]
        else:
            tmax[k] = np.inf

    n = 0
    while True:
        out[n, 0] = idx[0]
        out[n, 1] = idx[1]
        out[n, 2] = idx[2]
        n += 1
        tnext = min(tmax[0], tmax[1], tmax[2])
        if tnext >= t1 - T_EPS:
            break
        if fault == FAULT_STEP_ORDER:
            axis = 0
            best = -1.0
            for k in range(3):
                if step[k] != 0 and tmax[k] > best:
                    best = tmax[k]
                    axis = k
            idx[axis] += step[axis]
        else:
            for k in range(3):
                if step[k] != 0 and tmax[k] <= tnext + T_EPS:
                    idx[k] += step[k]
        stop = False
        for k in range(3):
            if idx[k] < 0 or idx[k] >= dims[k]:
                stop = True
            elif step[k] > 0:
                tmax[k] = (idx[k] + 1 - ga[k]) / gd[k]
            elif step[k] < 0:
                tmax[k] = (idx[k] - ga[k]) / gd[k]
        if stop:
            break
    return n


@numba.njit(cache=True, nogil=True)
def _carve_kernel(dims, gpoints, gcam, src_idx, src_inside, free, fault):
    """Mark cells traversed by each point->camera ray in ``free``; return cells visited."""
    buf = np.empty((dims[0] + dims[1] + dims[2] + 1, 3), dtype=np.int64)
    total = 0
    for i in range(gpoints.shape[0]):
        n = _traverse_kernel(dims, gpoints[i], gcam, buf, fault)
        total += n
        for j in range(n):
            x = buf[j, 0]
            y = buf[j, 1]
            z = buf[j, 2]
            if src_inside[i] and x == src_idx[i, 0] and y == src_idx[i, 1] and z == src_idx[i, 2]:
                continue
            free[x, y, z] = 1
    return total


def _to_grid(spec: VoxelGridSpec, pts) -> np.ndarray:
    return (np.asarray(pts, dtype=np.float64) - spec.origin_array) / spec.size_array


def traverse_ray(spec: VoxelGridSpec, start, end, *, fault: int = FAULT_NONE) -> np.ndarray:
    """Voxels crossed by the segment ``start -> end``, in order, as an (M, 3) int array.

    The segment is clipped to the grid first; an empty (0, 3) array is returned
    when it misses the grid.
    """
    dims = np.array(spec.dims, dtype=np.int64)
    out = np.empty((int(dims.sum()) + 1, 3), dtype=np.int64)
    n = _traverse_kernel(dims, _to_grid(spec, start), _to_grid(spec, end), out, fault)
    return out[:n].copy()


def voxelize_points(spec: VoxelGridSpec, points) -> VoxelCountGrid:
    pts = points.points if isinstance(points, PointCloud) else np.asarray(points, dtype=np.float64)
    idx, inside = voxel_indices(spec, pts)
    idx = idx[inside]
    flat = np.ravel_multi_index(idx.T, spec.dims) if len(idx) else np.zeros(0, dtype=np.int64)
    counts = np.bincount(flat, minlength=spec.num_cells).astype(np.int32)
    return VoxelCountGrid(counts.reshape(spec.dims))


def carve_free_space(spec: VoxelGridSpec, points, cam_origin_lidar, *, threads: int = 1,
                     fault: int = FAULT_NONE) -> tuple[np.ndarray, int]:
    """Boolean (X, Y, Z) mask of voxels crossed by any point->camera ray.

    The voxel holding a ray's own source point is never marked by that ray.
    Rays are split into ``threads`` contiguous chunks, each carved into its own
    mask; masks are merged with a logical OR, so the result does not depend on
    scheduling. Also returns the total number of (ray, voxel) visits.
    """
    pts = points.points if isinstance(points, PointCloud) else np.asarray(points, dtype=np.float64)
    pts = pts.reshape(-1, 3)
    dims = np.array(spec.dims, dtype=np.int64)
    gpoints = np.ascontiguousarray(_to_grid(spec, pts))
    gcam = _to_grid(spec, cam_origin_lidar)
    src_idx, src_inside = voxel_indices(spec, pts)

    threads = max(1, int(threads))
    bounds = np.linspace(0, len(pts), threads + 1).astype(np.int64)

    def work(k):
        lo, hi = bounds[k], bounds[k + 1]
        mask = np.zeros(spec.dims, dtype=np.uint8)
        visited = _carve_kernel(dims, gpoints[lo:hi], gcam, src_idx[lo:hi], src_inside[lo:hi],
                                mask, fault)
        return mask, visited

    if threads == 1:
        results = [work(0)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, range(threads)))

    free = results[0][0]
    for mask, _ in results[1:]:
        np.maximum(free, mask, out=free)
    return free.astype(bool), int(sum(v for _, v in results))


def generate_voxel_labels(spec: VoxelGridSpec, points, cam_origin_lidar, *, threads: int = 1,
                          counts: Optional[VoxelCountGrid] = None,
                          fault: int = FAULT_NONE) -> OccupancyLabelGrid:
    """Tri-state voxel labels: unknown, then free along rays, then occupied where points fall.

    Occupied always wins over free. Points outside the grid still cast rays.
    """
    if counts is None:
        counts = voxelize_points(spec, points)
    free, _ = carve_free_space(spec, points, cam_origin_lidar, threads=threads, fault=fault)
    values = np.full(spec.dims, UNKNOWN, dtype=np.int8)
    values[free] = FREE
    values[counts.counts > 0] = OCCUPIED
    return OccupancyLabelGrid(values, Space.VOXEL, spec.origin, spec.voxel_size)
