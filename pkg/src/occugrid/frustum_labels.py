"""Frustum occupancy labels from a categorical depth index map.

Along every pixel ray that received a LiDAR return the labels read
``0 ... 0 1 -1 ... -1``: free in front of the surface bin, occupied at it,
unknown behind it. Pixels without a return are unknown throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (Calibration, FrustumGridSpec, PointCloud, depth_to_bin, lidar_to_camera,
                       project_to_image)
from .labels import FREE, OCCUPIED, UNKNOWN, OccupancyLabelGrid, Space


@dataclass(frozen=True, eq=False)
class IndexMap:
    """(H_F, W_F) depth-bin indices; -1 where no valid point projects."""

    grid: np.ndarray

    @property
    def valid_pixels(self) -> int:
        return int(np.count_nonzero(self.grid >= 0))


def min_depth_image(calib: Calibration, points, spec: FrustumGridSpec) -> np.ndarray:
    """Full-resolution (H, W) image of the nearest in-range depth per pixel (inf if none)."""
    width, height = spec.image_size
    cam = lidar_to_camera(calib, points)
    proj = project_to_image(calib, cam, (width, height))
    depth = proj.uvd[:, 2]
    keep = proj.valid & (depth >= spec.depth_min) & (depth < spec.depth_max)
    image = np.full((height, width), np.inf)
    if np.any(keep):
        cols = np.floor(proj.uvd[keep, 0]).astype(np.int64)
        rows = np.floor(proj.uvd[keep, 1]).astype(np.int64)
        np.minimum.at(image, (rows, cols), depth[keep])
    return image


def build_index_map(calib: Calibration, points, spec: FrustumGridSpec) -> IndexMap:
    """Project points, keep the nearest depth per pixel, then the nearest per s x s block."""
    if isinstance(points, PointCloud):
        points = points.points
    s = spec.downsample
    image = min_depth_image(calib, points, spec)
    block = image.reshape(spec.height, s, spec.width, s).min(axis=(1, 3))
    grid = np.full(block.shape, -1, dtype=np.int32)
    hit = np.isfinite(block)
    grid[hit] = depth_to_bin(spec, block[hit])
    return IndexMap(grid)


def generate_frustum_labels(ind: IndexMap, spec: FrustumGridSpec) -> OccupancyLabelGrid:
    grid = np.asarray(ind.grid)
    if grid.shape != (spec.height, spec.width):
        raise ValueError(f"index map shape {grid.shape} does not match frustum grid "
                         f"{(spec.height, spec.width)}")
    if grid.size and (grid.min() < -1 or grid.max() >= spec.depth_bins):
        raise ValueError("index map entries must be -1 or in [0, depth_bins)")
    d = np.arange(spec.depth_bins)
    k = grid[..., None]
    values = np.where(d < k, FREE, np.where(d == k, OCCUPIED, UNKNOWN)).astype(np.int8)
    return OccupancyLabelGrid(values, Space.FRUSTUM, (0.0, 0.0, 0.0), (float(spec.downsample), 0.0, 0.0))


def frustum_labels_from_points(calib: Calibration, points, spec: FrustumGridSpec):
    """Convenience pipeline returning ``(index_map, labels)``."""
    ind = build_index_map(calib, points, spec)
    return ind, generate_frustum_labels(ind, spec)
