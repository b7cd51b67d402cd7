"""Oracle-backed self checks run by ``occugrid verify``."""

from __future__ import annotations

import time
from typing import Callable, NamedTuple

import numpy as np

from .errors import FormatError
from .frustum_labels import build_index_map, generate_frustum_labels
from .geometry import Discretization, FrustumGridSpec, VoxelGridSpec
from .io_formats import read_occ3, write_occ3
from .labels import FREE, OCCUPIED, UNKNOWN, OccupancyLabelGrid, Space
from .occupancy_math import (LossConfig, finite_difference_check, focal_loss_masked, gate_features,
                             gate_features_backward, sigmoid_backward, sigmoid_field)
from .sampler import sample_frustum_to_voxel
from .scene_oracle import (default_wall_scene, generate_scene, oracle_frustum_labels, oracle_ray_cells,
                           random_scene, random_segments, traversal_matches_oracle)
from .voxel_labels import FAULT_NONE, generate_voxel_labels, traverse_ray, voxelize_points


class CheckResult(NamedTuple):
    name: str
    passed: bool
    detail: str


def check_traversal(n: int = 1000, seed: int = 0, fault: int = FAULT_NONE) -> CheckResult:
    spec = VoxelGridSpec((0.0, 0.0, 0.0), (1.0, 1.0, 1.0), (64, 64, 64))
    segs = random_segments(np.random.default_rng(seed), n, (-8, -8, -8), (72, 72, 72))
    bad = 0
    for a, b in segs:
        if not traversal_matches_oracle(traverse_ray(spec, a, b, fault=fault), oracle_ray_cells(spec, a, b)):
            bad += 1
    return CheckResult("traversal_oracle", bad == 0, f"{n - bad}/{n} segments match")


def small_frustum_spec(discretization=Discretization.LID) -> FrustumGridSpec:
    return FrustumGridSpec(width=40, height=24, depth_bins=24, downsample=4, depth_min=2.0,
                           depth_max=40.0, discretization=discretization)


def frustum_pattern_ok(labels: OccupancyLabelGrid, ind: np.ndarray) -> bool:
    """Every valid pixel reads 0^k 1 (-1)^(D-k-1) with k its index; invalid pixels all -1."""
    v = labels.values
    d = np.arange(v.shape[2])
    k = ind[..., None]
    expected = np.where(d < k, FREE, np.where(d == k, OCCUPIED, UNKNOWN))
    expected = np.where(k < 0, UNKNOWN, expected)
    return bool(np.array_equal(v, expected))


def check_frustum(n_scenes: int = 50, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    bad = 0
    for i in range(n_scenes):
        fspec = small_frustum_spec(Discretization.LID if i % 2 == 0 else Discretization.UNIFORM)
        cloud, calib = generate_scene(random_scene(rng, image_size=fspec.image_size))
        ind = build_index_map(calib, cloud, fspec)
        labels = generate_frustum_labels(ind, fspec)
        oracle = oracle_frustum_labels(calib, cloud, fspec)
        if not (labels.equals(oracle) and frustum_pattern_ok(labels, ind.grid)):
            bad += 1
    return CheckResult("frustum_oracle", bad == 0, f"{n_scenes - bad}/{n_scenes} scenes match")


def wall_grid() -> VoxelGridSpec:
    return VoxelGridSpec.from_range((2.0, -12.8, -3.0), (34.0, 12.8, 1.0), (0.16, 0.16, 0.16))


def wall_shadow_mask(spec: VoxelGridSpec, cam, wall_x: float, y_range, z_range) -> np.ndarray:
    """Voxels lying wholly behind the wall plane whose every corner is hidden behind the wall face."""
    lo = spec.origin_array
    size = spec.size_array
    cam = np.asarray(cam, dtype=np.float64)
    idx = np.stack(np.meshgrid(*[np.arange(n) for n in spec.dims], indexing="ij"), axis=-1)
    base = lo + idx * size
    hidden = base[..., 0] > wall_x
    for corner in np.ndindex(2, 2, 2):
        p = base + np.array(corner) * size
        t = (wall_x - cam[0]) / (p[..., 0] - cam[0])
        hit = cam + t[..., None] * (p - cam)
        hidden &= ((hit[..., 1] > y_range[0]) & (hit[..., 1] < y_range[1])
                   & (hit[..., 2] > z_range[0]) & (hit[..., 2] < z_range[1]))
    return hidden


def check_voxel_labels(threads: int = 8, seed: int = 0) -> CheckResult:
    scene = default_wall_scene(seed)
    cloud, calib = generate_scene(scene)
    spec = wall_grid()
    cam = calib.camera_center_lidar()
    counts = voxelize_points(spec, cloud)
    serial = generate_voxel_labels(spec, cloud, cam, threads=1)
    parallel = generate_voxel_labels(spec, cloud, cam, threads=threads)
    wall = scene.slabs[0]
    shadow = wall_shadow_mask(spec, cam, wall.lo[0], (wall.lo[1], wall.hi[1]), (wall.lo[2], wall.hi[2]))
    problems = []
    if not np.array_equal(serial.values == OCCUPIED, counts.counts > 0):
        problems.append("occupied set differs from counts>0")
    if np.any(serial.values[shadow] == FREE):
        problems.append(f"{int(np.count_nonzero(serial.values[shadow] == FREE))} free voxels behind wall")
    if write_occ3(serial) != write_occ3(parallel):
        problems.append(f"serial and {threads}-thread outputs differ")
    detail = "; ".join(problems) or f"{len(cloud)} points, {int(shadow.sum())} shadowed voxels checked"
    return CheckResult("voxel_label_invariants", not problems, detail)


def check_losses(n: int = 100, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    cfg = LossConfig()
    worst = 0.0
    unknown_grad_ok = True
    for _ in range(n):
        shape = (4, 4, 4)
        labels = rng.integers(-1, 2, size=shape)
        # magnitudes bounded away from zero: relative error is meaningless at vanishing gradients
        feats = rng.uniform(0.5, 1.5, size=shape + (3,))
        weights = rng.uniform(0.5, 1.5, size=shape + (3,)) * rng.choice([-1.0, 1.0], size=shape + (3,))
        logits = rng.uniform(-3, 3, size=shape)

        def focal(p):
            r = focal_loss_masked(p, labels, cfg)
            return r.loss, r.grad

        def chained(z):
            occ = sigmoid_field(z)
            r = focal_loss_masked(occ, labels, cfg)
            gated = gate_features(feats, occ)
            _, g_occ = gate_features_backward(feats, occ, weights)
            value = r.loss + float(np.sum(weights * gated))
            return value, sigmoid_backward(occ, r.grad + g_occ)

        def gate_wrt_features(f):
            out = gate_features(f, sigmoid_field(logits))
            g_f, _ = gate_features_backward(f, sigmoid_field(logits), weights)
            return float(np.sum(weights * out)), g_f

        p = rng.uniform(0.05, 0.95, size=shape)
        worst = max(worst, finite_difference_check(focal, p, 1e-6),
                    finite_difference_check(chained, logits, 1e-6),
                    finite_difference_check(gate_wrt_features, feats, 1e-6))
        unknown_grad_ok &= bool(np.all(focal_loss_masked(p, labels, cfg).grad[labels == -1] == 0.0))
    ok = worst < 1e-5 and unknown_grad_ok
    return CheckResult("loss_gradients", ok, f"max relative error {worst:.2e}, unknown grads zero={unknown_grad_ok}")


def _corner_oracle(field, c, r, b):
    out = 0.0
    c0, r0, b0 = int(np.floor(c)), int(np.floor(r)), int(np.floor(b))
    for dr in (0, 1):
        for dc in (0, 1):
            for db in (0, 1):
                w = ((r - r0) if dr else (1 - (r - r0))) * ((c - c0) if dc else (1 - (c - c0))) \
                    * ((b - b0) if db else (1 - (b - b0)))
                out += w * field[r0 + dr, c0 + dc, b0 + db]
    return out


def check_sampler(n: int = 100, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    field = rng.normal(size=(8, 8, 8))
    coords = rng.uniform(0, 7, size=(n, 3))
    got = sample_frustum_to_voxel(field, coords)
    want = np.array([_corner_oracle(field, *q) for q in coords])
    err_corner = float(np.max(np.abs(got - want)))
    ramp = np.broadcast_to(np.arange(8.0), (8, 8, 8))
    err_ramp = float(np.max(np.abs(sample_frustum_to_voxel(ramp, coords) - coords[:, 2])))
    err_const = float(np.max(np.abs(sample_frustum_to_voxel(np.full((8, 8, 8), 3.25), coords) - 3.25)))
    ok = err_corner <= 1e-12 and err_ramp <= 1e-9 and err_const <= 1e-9
    return CheckResult("sampler", ok, f"corner {err_corner:.1e}, ramp {err_ramp:.1e}, const {err_const:.1e}")


def random_label_grid(rng: np.random.Generator, space: Space | None = None) -> OccupancyLabelGrid:
    space = Space(int(rng.integers(0, 2))) if space is None else space
    shape = tuple(int(v) for v in rng.integers(1, 9, size=3))
    values = rng.integers(-1, 2, size=shape).astype(np.int8)
    if space is Space.FRUSTUM:
        return OccupancyLabelGrid(values, space, (0.0, 0.0, 0.0), (float(rng.integers(1, 9)), 0.0, 0.0))
    return OccupancyLabelGrid(values, space, tuple(rng.normal(size=3)), tuple(rng.uniform(0.05, 1, 3)))


def fuzz_occ3(data: bytes, rng: np.random.Generator, n: int) -> tuple[int, int]:
    """Truncate or mutate ``data`` ``n`` times; return (typed errors, successful parses)."""
    errors = parsed = 0
    for i in range(n):
        buf = bytearray(data)
        if i % 2 == 0:
            buf = buf[: int(rng.integers(0, len(buf)))]
        else:
            for _ in range(int(rng.integers(1, 4))):
                buf[int(rng.integers(0, len(buf)))] = int(rng.integers(0, 256))
        try:
            read_occ3(bytes(buf))
            parsed += 1
        except FormatError:
            errors += 1
    return errors, parsed


def check_formats(n_grids: int = 200, n_fuzz: int = 1000, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    mismatches = 0
    for i in range(n_grids):
        g = random_label_grid(rng, Space(i % 2))
        if not read_occ3(write_occ3(g)).equals(g):
            mismatches += 1
    try:
        errors, parsed = fuzz_occ3(write_occ3(random_label_grid(rng, Space.VOXEL)), rng, n_fuzz)
    except Exception as exc:  # anything but FormatError is a failure
        return CheckResult("formats", False, f"fuzz raised {type(exc).__name__}: {exc}")
    ok = mismatches == 0
    return CheckResult("formats", ok, f"{n_grids - mismatches}/{n_grids} round trips; fuzz {errors} typed "
                                      f"errors, {parsed} benign parses")


def run_all(quick: bool = False, seed: int = 0, fault: int = FAULT_NONE,
            threads: int = 8) -> list[CheckResult]:
    checks: list[Callable[[], CheckResult]] = [
        lambda: check_traversal(200 if quick else 1000, seed, fault),
        lambda: check_frustum(10 if quick else 50, seed),
        lambda: check_voxel_labels(threads, seed),
        lambda: check_losses(10 if quick else 100, seed),
        lambda: check_sampler(100, seed),
        lambda: check_formats(50 if quick else 200, 200 if quick else 1000, seed),
    ]
    results = []
    for check in checks:
        t = time.perf_counter()
        r = check()
        results.append(r._replace(detail=f"{r.detail} ({time.perf_counter() - t:.2f}s)"))
    return results
