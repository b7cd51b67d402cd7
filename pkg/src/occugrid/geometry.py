"""Camera model, calibration parsing, depth discretization and voxel indexing.

Conventions used throughout the package:

* LiDAR frame follows KITTI (x forward, y left, z up); camera frame has
  z forward, x right, y down.
* A LiDAR point ``x`` projects to the image as ``intrinsic @ rect @ lidar_to_cam @ x``.
* All intervals are half-open ``[lower, upper)``, both for depth bins and voxels.
* Everything is float64.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Optional, Sequence

import numba
import numpy as np

from .errors import CalibrationError, ConfigError

OUT_OF_RANGE = -1

_ORTHONORMAL_TOL = 1e-6
_CORNER_TOL = 1e-9


class Discretization(str, enum.Enum):
    UNIFORM = "UNIFORM"
    LID = "LID"


@dataclass(frozen=True, eq=False)
class Calibration:
    """Pinhole camera with LiDAR extrinsics.

    intrinsic: 3x4 projection matrix (pixels), rect: 3x3 rectifying rotation,
    lidar_to_cam: 4x4 rigid transform (meters).
    """

    intrinsic: np.ndarray
    rect: np.ndarray = field(default_factory=lambda: np.eye(3))
    lidar_to_cam: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        p = np.array(self.intrinsic, dtype=np.float64)
        r = np.array(self.rect, dtype=np.float64)
        t = np.array(self.lidar_to_cam, dtype=np.float64)
        if p.shape != (3, 4):
            raise CalibrationError(f"intrinsic must be 3x4, got {p.shape}")
        if r.shape != (3, 3):
            raise CalibrationError(f"rect must be 3x3, got {r.shape}")
        if t.shape != (4, 4):
            raise CalibrationError(f"lidar_to_cam must be 4x4, got {t.shape}")
        for name, m in (("intrinsic", p), ("rect", r), ("lidar_to_cam", t)):
            if not np.all(np.isfinite(m)):
                raise CalibrationError(f"{name} has non-finite entries")
        if not (p[0, 0] > 0 and p[1, 1] > 0):
            raise CalibrationError("intrinsic focal entries (0,0) and (1,1) must be positive")
        if np.abs(r @ r.T - np.eye(3)).max() > _ORTHONORMAL_TOL:
            raise CalibrationError("rect is not orthonormal")
        if not np.array_equal(t[3], [0.0, 0.0, 0.0, 1.0]):
            raise CalibrationError("lidar_to_cam bottom row must be (0, 0, 0, 1)")
        for name, m in (("intrinsic", p), ("rect", r), ("lidar_to_cam", t)):
            m.setflags(write=False)
            object.__setattr__(self, name, m)

    @cached_property
    def lidar_to_rect(self) -> np.ndarray:
        """4x4 transform taking homogeneous LiDAR points to the rectified camera frame."""
        r4 = np.eye(4)
        r4[:3, :3] = self.rect
        m = r4 @ self.lidar_to_cam
        m.setflags(write=False)
        return m

    def camera_center_lidar(self) -> np.ndarray:
        """Rectified-frame origin expressed in the LiDAR frame."""
        return np.linalg.inv(self.lidar_to_rect)[:3, 3].copy()


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    intensity: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must be Nx3, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", pts)
        if self.intensity is not None:
            inten = np.asarray(self.intensity, dtype=np.float64).reshape(-1)
            if inten.shape[0] != pts.shape[0]:
                raise ValueError("intensity length does not match point count")
            object.__setattr__(self, "intensity", inten)

    def __len__(self):
        return self.points.shape[0]


@dataclass(frozen=True)
class VoxelGridSpec:
    origin: tuple[float, float, float]
    voxel_size: tuple[float, float, float]
    dims: tuple[int, int, int]

    def __post_init__(self):
        origin = tuple(float(v) for v in self.origin)
        size = tuple(float(v) for v in self.voxel_size)
        dims = tuple(int(v) for v in self.dims)
        if len(origin) != 3 or len(size) != 3 or len(dims) != 3:
            raise ConfigError("origin, voxel_size and dims must have 3 components")
        if not all(math.isfinite(v) for v in origin + size):
            raise ConfigError("voxel grid geometry must be finite")
        if min(size) <= 0:
            raise ConfigError(f"voxel_size components must be > 0, got {size}")
        if min(dims) < 1:
            raise ConfigError(f"dims must be >= 1, got {dims}")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "voxel_size", size)
        object.__setattr__(self, "dims", dims)

    @classmethod
    def from_range(cls, lower: Sequence[float], upper: Sequence[float],
                   voxel_size: Sequence[float]) -> "VoxelGridSpec":
        """Build a grid covering ``[lower, upper)``; the range must be a whole number of voxels."""
        lo = np.asarray(lower, dtype=np.float64)
        hi = np.asarray(upper, dtype=np.float64)
        size = np.asarray(voxel_size, dtype=np.float64)
        if np.any(size <= 0):
            raise ConfigError(f"voxel_size components must be > 0, got {size.tolist()}")
        dims = np.rint((hi - lo) / size).astype(np.int64)
        if np.any(np.abs(lo + dims * size - hi) > _CORNER_TOL):
            raise ConfigError(
                f"range {lo.tolist()}..{hi.tolist()} is not a whole number of voxels of size {size.tolist()}")
        return cls(tuple(lo), tuple(size), tuple(int(d) for d in dims))

    @property
    def origin_array(self) -> np.ndarray:
        return np.array(self.origin)

    @property
    def size_array(self) -> np.ndarray:
        return np.array(self.voxel_size)

    @property
    def upper(self) -> np.ndarray:
        return self.origin_array + np.array(self.dims) * self.size_array

    @property
    def num_cells(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    def voxel_centers(self, indices: Optional[np.ndarray] = None) -> np.ndarray:
        """Centers of the given (M, 3) indices, or of the whole grid as (X, Y, Z, 3)."""
        if indices is None:
            axes = [np.arange(n) for n in self.dims]
            indices = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        return self.origin_array + (np.asarray(indices) + 0.5) * self.size_array


@dataclass(frozen=True)
class FrustumGridSpec:
    """Frustum feature grid: ``height x width`` feature cells times ``depth_bins`` depth bins.

    The padded input image is ``(width * downsample) x (height * downsample)`` pixels.
    """

    width: int
    height: int
    depth_bins: int = 80
    downsample: int = 4
    depth_min: float = 2.0
    depth_max: float = 46.8
    discretization: Discretization = Discretization.LID

    def __post_init__(self):
        object.__setattr__(self, "discretization", Discretization(self.discretization))
        for name in ("width", "height", "depth_bins", "downsample"):
            object.__setattr__(self, name, int(getattr(self, name)))
        object.__setattr__(self, "depth_min", float(self.depth_min))
        object.__setattr__(self, "depth_max", float(self.depth_max))
        if self.width < 1 or self.height < 1:
            raise ConfigError("frustum width and height must be >= 1")
        if self.depth_bins < 1:
            raise ConfigError("depth_bins must be >= 1")
        if self.downsample < 1:
            raise ConfigError("downsample must be >= 1")
        if not self.depth_min < self.depth_max:
            raise ConfigError("depth_min must be < depth_max")

    @property
    def image_size(self) -> tuple[int, int]:
        """(width, height) of the padded input image in pixels."""
        return self.width * self.downsample, self.height * self.downsample

    @property
    def shape(self) -> tuple[int, int, int]:
        """Label grid shape (rows, columns, bins)."""
        return self.height, self.width, self.depth_bins

    @cached_property
    def lid_delta(self) -> float:
        d = self.depth_bins
        return 2.0 * (self.depth_max - self.depth_min) / (d * (d + 1))

    @cached_property
    def bin_edges(self) -> np.ndarray:
        """The ``depth_bins + 1`` bin edges; the last edge is exactly ``depth_max``."""
        i = np.arange(self.depth_bins + 1, dtype=np.float64)
        if self.discretization is Discretization.UNIFORM:
            edges = self.depth_min + i * (self.depth_max - self.depth_min) / self.depth_bins
        else:
            edges = self.depth_min + self.lid_delta * i * (i + 1) / 2.0
        edges[-1] = self.depth_max
        edges.setflags(write=False)
        return edges


class Projection(NamedTuple):
    uvd: np.ndarray  # (N, 3): column, row, camera-frame depth
    valid: np.ndarray  # (N,) bool


class ClippedSegment(NamedTuple):
    start: np.ndarray
    end: np.ndarray
    t_enter: float
    t_exit: float


_CALIB_SHAPES = {"P2": (3, 4), "R0_rect": (3, 3), "Tr_velo_to_cam": (3, 4)}


def parse_kitti_calib(text: str) -> Calibration:
    """Parse a KITTI object-detection calibration file (keys P2, R0_rect, Tr_velo_to_cam)."""
    found: dict[str, np.ndarray] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or ":" not in line:
            continue
        key, _, rest = line.partition(":")
        key = key.strip()
        if key not in _CALIB_SHAPES:
            continue
        shape = _CALIB_SHAPES[key]
        tokens = rest.split()
        if len(tokens) != shape[0] * shape[1]:
            raise CalibrationError(
                f"line {lineno} ({key}): expected {shape[0] * shape[1]} entries, got {len(tokens)}")
        try:
            values = np.array([float(tok) for tok in tokens])
        except ValueError as exc:
            raise CalibrationError(f"line {lineno} ({key}): {exc}") from None
        if not np.all(np.isfinite(values)):
            raise CalibrationError(f"line {lineno} ({key}): non-finite entry")
        found[key] = values.reshape(shape)

    for key in _CALIB_SHAPES:
        if key not in found:
            raise CalibrationError(f"missing calibration key {key}")

    lidar_to_cam = np.eye(4)
    lidar_to_cam[:3, :] = found["Tr_velo_to_cam"]
    return Calibration(found["P2"], found["R0_rect"], lidar_to_cam)


def format_kitti_calib(calib: Calibration) -> str:
    """Render ``calib`` in KITTI object-detection calibration syntax."""
    def row(key, m):
        return key + ": " + " ".join(f"{v:.12e}" for v in np.asarray(m).reshape(-1))

    return "\n".join([
        row("P2", calib.intrinsic),
        row("R0_rect", calib.rect),
        row("Tr_velo_to_cam", calib.lidar_to_cam[:3, :]),
    ]) + "\n"


def lidar_to_camera(calib: Calibration, points) -> np.ndarray:
    """Map LiDAR points (PointCloud or Nx3) to the rectified camera frame."""
    pts = points.points if isinstance(points, PointCloud) else np.asarray(points, dtype=np.float64)
    pts = pts.reshape(-1, 3)
    m = calib.lidar_to_rect
    return pts @ m[:3, :3].T + m[:3, 3]


def project_to_image(calib: Calibration, cam_points: np.ndarray,
                     image_size: Optional[tuple[int, int]] = None) -> Projection:
    """Perspective projection of camera-frame points.

    A point is valid when its depth is positive and, if ``image_size`` =
    (width, height) is given, its pixel coordinates lie in ``[0, width) x [0, height)``.
    """
    cam = np.asarray(cam_points, dtype=np.float64).reshape(-1, 3)
    p = calib.intrinsic
    h = cam @ p[:, :3].T + p[:, 3]
    w = h[:, 2]
    depth = cam[:, 2]
    valid = (depth > 0) & (w > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(valid, h[:, 0] / w, np.nan)
        v = np.where(valid, h[:, 1] / w, np.nan)
    if image_size is not None:
        width, height = image_size
        inside = (u >= 0) & (u < width) & (v >= 0) & (v < height)
        valid &= inside
    return Projection(np.stack([u, v, depth], axis=1), valid)


def _bins_from_edges(spec: FrustumGridSpec, d: np.ndarray, guess: np.ndarray) -> np.ndarray:
    edges = spec.bin_edges
    in_range = (d >= spec.depth_min) & (d < spec.depth_max)
    b = np.clip(guess, 0, spec.depth_bins - 1)
    # closed-form guess can be off by one at edges through rounding
    b = np.where(d < edges[b], b - 1, b)
    b = np.where(d >= edges[np.minimum(b + 1, spec.depth_bins)], b + 1, b)
    b = np.clip(b, 0, spec.depth_bins - 1)
    return np.where(in_range, b, OUT_OF_RANGE)


def depth_to_bin(spec: FrustumGridSpec, depth):
    """Bin index of each depth, ``OUT_OF_RANGE`` (-1) outside ``[depth_min, depth_max)``."""
    scalar = np.isscalar(depth)
    d = np.asarray(depth, dtype=np.float64)
    rel = d - spec.depth_min
    with np.errstate(invalid="ignore"):
        if spec.discretization is Discretization.UNIFORM:
            raw = rel * spec.depth_bins / (spec.depth_max - spec.depth_min)
        else:
            raw = -0.5 + 0.5 * np.sqrt(np.maximum(1.0 + 8.0 * rel / spec.lid_delta, 0.0))
    guess = np.nan_to_num(np.floor(raw), nan=0.0, posinf=0.0, neginf=0.0).astype(np.int64)
    out = _bins_from_edges(spec, d, guess)
    return int(out) if scalar else out


def bin_to_depth(spec: FrustumGridSpec, bin_index):
    """Center depth of each bin."""
    scalar = np.isscalar(bin_index)
    b = np.asarray(bin_index)
    if np.any(b < 0) or np.any(b >= spec.depth_bins):
        raise ValueError(f"bin index out of range [0, {spec.depth_bins})")
    edges = spec.bin_edges
    b = b.astype(np.int64)
    centers = 0.5 * (edges[b] + edges[b + 1])
    return float(centers) if scalar else centers


def continuous_bin(spec: FrustumGridSpec, depth):
    """Continuous bin coordinate; integer ``b`` is the center of bin ``b``.

    The mapping is the exact inverse of :func:`bin_to_depth` extended to real
    arguments. Values outside ``[depth_min, depth_max)`` are extrapolated.
    """
    d = np.asarray(depth, dtype=np.float64)
    rel = d - spec.depth_min
    if spec.discretization is Discretization.UNIFORM:
        width = (spec.depth_max - spec.depth_min) / spec.depth_bins
        return rel / width - 0.5
    # LID bin centers sit at depth_min + delta/2 * (b + 1)**2
    return np.sqrt(np.maximum(2.0 * rel / spec.lid_delta, 0.0)) - 1.0


def voxel_indices(spec: VoxelGridSpec, points) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized voxel lookup: returns (M, 3) int64 indices and an in-range mask."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    lo = spec.origin_array
    hi = spec.upper
    dims = np.array(spec.dims)
    idx = np.floor((pts - lo) / spec.size_array).astype(np.int64)
    inside = np.all((pts >= lo) & (pts < hi), axis=1)
    idx = np.clip(idx, 0, dims - 1)
    return idx, inside


def voxel_index_of(spec: VoxelGridSpec, point) -> Optional[tuple[int, int, int]]:
    """Index triple of the voxel containing ``point``, or None when outside the grid."""
    idx, inside = voxel_indices(spec, point)
    if not inside[0]:
        return None
    return tuple(int(v) for v in idx[0])


@numba.njit(cache=True)
def slab_clip(lo, hi, a, b):
    """Parameter interval ``[t0, t1]`` of segment ``a + t (b - a)`` inside box ``[lo, hi]``.

    Returns ``(t0, t1)`` with ``t0 > t1`` when there is no intersection.
    """
    t0 = 0.0
    t1 = 1.0
    for k in range(3):
        d = b[k] - a[k]
        if d == 0.0:
            if a[k] < lo[k] or a[k] > hi[k]:
                return 1.0, 0.0
            continue
        ta = (lo[k] - a[k]) / d
        tb = (hi[k] - a[k]) / d
        if ta > tb:
            ta, tb = tb, ta
        if ta > t0:
            t0 = ta
        if tb < t1:
            t1 = tb
        if t0 > t1:
            return 1.0, 0.0
    return t0, t1


def clip_segment_to_grid(spec: VoxelGridSpec, a, b) -> Optional[ClippedSegment]:
    """Clip segment ``[a, b]`` to the grid box; None when they do not meet."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    t0, t1 = slab_clip(spec.origin_array, spec.upper, a, b)
    if t0 > t1:
        return None
    d = b - a
    start = a if t0 == 0.0 else a + t0 * d
    end = b if t1 == 1.0 else a + t1 * d
    return ClippedSegment(start, end, float(t0), float(t1))
