"""Command-line entry point.

Exit codes: 0 success, 1 verification failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import os
import statistics
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import verify
from .config import RunConfig, load_config
from .errors import OccugridError
from .frustum_labels import build_index_map, generate_frustum_labels
from .geometry import FrustumGridSpec, PointCloud, VoxelGridSpec, format_kitti_calib, parse_kitti_calib
from .io_formats import atomic_write, export_ply, read_lidar_bin, read_occ3, write_lidar_bin, write_occ3
from .labels import Space
from .scene_oracle import CameraPose, camera_calibration, default_wall_scene, generate_scene
from .voxel_labels import FAULT_NONE, FAULT_STEP_ORDER, carve_free_space, generate_voxel_labels, voxelize_points

THREADS_ENV = "OCCUGRID_THREADS"


class InputError(Exception):
    """Bad command-line input; reported with exit status 2."""


def _threads(flag: Optional[int]) -> Optional[int]:
    if flag is not None:
        return flag
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise InputError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return None


def _run_config(args) -> RunConfig:
    return load_config(args.config, args.preset, points=args.points, calib=args.calib, out=args.out,
                       threads=_threads(getattr(args, "threads", None)), seed=getattr(args, "seed", None))


def _read_inputs(cfg: RunConfig):
    if cfg.points is None or cfg.calib is None:
        raise InputError("--points and --calib are required (flag or config run section)")
    for p in (cfg.points, cfg.calib):
        if not p.is_file():
            raise InputError(f"input file not found: {p}")
    cloud = read_lidar_bin(cfg.points.read_bytes())
    calib = parse_kitti_calib(cfg.calib.read_text())
    return cloud, calib


def _output_path(cfg: RunConfig, suffix: str) -> Path:
    if cfg.out is None:
        raise InputError("--out is required")
    if cfg.out.is_dir():
        return cfg.out / f"{cfg.points.stem}_{suffix}.occ3"
    if not cfg.out.parent.exists():
        raise InputError(f"output directory does not exist: {cfg.out.parent}")
    return cfg.out


def cmd_gen_frustum(args) -> int:
    cfg = _run_config(args)
    cloud, calib = _read_inputs(cfg)
    out = _output_path(cfg, "frustum")
    ind = build_index_map(calib, cloud, cfg.frustum)
    labels = generate_frustum_labels(ind, cfg.frustum)
    atomic_write(out, write_occ3(labels))
    c = labels.counts()
    print(f"valid_pixels={ind.valid_pixels} occupied={c['occupied']} free={c['free']} unknown={c['unknown']}")
    return 0


def cmd_gen_voxel(args) -> int:
    cfg = _run_config(args)
    cloud, calib = _read_inputs(cfg)
    out = _output_path(cfg, "voxel")
    labels = generate_voxel_labels(cfg.voxel, cloud, calib.camera_center_lidar(), threads=cfg.threads)
    atomic_write(out, write_occ3(labels))
    d = cfg.voxel.dims
    print(f"dims={d[0]},{d[1]},{d[2]}")
    sys.stdout.write(labels.stats_text())
    return 0


def cmd_verify(args) -> int:
    fault = FAULT_STEP_ORDER if args.inject_fault else FAULT_NONE
    threads = _threads(args.threads) or 8
    results = verify.run_all(quick=args.quick, seed=args.seed or 0, fault=fault, threads=threads)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"failed: {', '.join(failed)}")
        return 1
    return 0


def _timed(fn, repeats):
    times, result = [], None
    for _ in range(repeats):
        t = time.perf_counter()
        result = fn()
        times.append(time.perf_counter() - t)
    return times, result


def _fmt_times(times):
    return f"min={min(times):.4f}s median={statistics.median(times):.4f}s max={max(times):.4f}s"


def cmd_bench(args) -> int:
    threads = _threads(args.threads) or 1
    n, g = args.num_points, args.grid
    rng = np.random.default_rng(args.seed or 0)
    spec = VoxelGridSpec((2.0, -0.25 * g, -0.25 * g), (0.5, 0.5, 0.5), (g, g, g))
    pts = rng.uniform(spec.origin_array, spec.upper, size=(n, 3))
    cloud = PointCloud(pts)
    cam = np.zeros(3)
    fspec = FrustumGridSpec(width=320, height=96, downsample=4, depth_min=2.0, depth_max=2.0 + 0.5 * g)
    calib = camera_calibration(CameraPose())

    # first call compiles the kernels
    carve_free_space(spec, pts[:10], cam, threads=1)
    print(f"bench points={n} grid={g}^3 threads={threads} repeats={args.repeats}")
    t_vox, _ = _timed(lambda: voxelize_points(spec, cloud), args.repeats)
    print(f"voxelize: {_fmt_times(t_vox)} points/s={n / statistics.median(t_vox):.3e}")
    t_carve, (_, visited) = _timed(lambda: carve_free_space(spec, cloud, cam, threads=threads), args.repeats)
    med = statistics.median(t_carve)
    print(f"carve: {_fmt_times(t_carve)} voxels_visited={visited} voxels_visited/s={visited / med:.3e} "
          f"points/s={n / med:.3e}")
    t_fru, _ = _timed(lambda: generate_frustum_labels(build_index_map(calib, cloud, fspec), fspec), args.repeats)
    print(f"frustum: {_fmt_times(t_fru)} points/s={n / statistics.median(t_fru):.3e}")
    return 0


def cmd_stats(args) -> int:
    path = Path(args.file)
    if not path.is_file():
        raise InputError(f"input file not found: {path}")
    grid = read_occ3(path.read_bytes())
    sys.stdout.write(grid.stats_text())
    return 0


def cmd_export_ply(args) -> int:
    path = Path(args.file)
    if not path.is_file():
        raise InputError(f"input file not found: {path}")
    grid = read_occ3(path.read_bytes())
    if grid.space is not Space.VOXEL:
        raise InputError("PLY export needs a VOXEL OCC3 file")
    spec = VoxelGridSpec(grid.origin, grid.cell_size, grid.shape)
    text = export_ply(grid, spec, args.which)
    atomic_write(Path(args.out), text.encode("ascii"))
    return 0


def cmd_make_scene(args) -> int:
    """Write a synthetic frame (velodyne .bin + KITTI calib .txt) into a directory."""
    cfg = load_config(args.config, args.preset)
    scene = cfg.scene or default_wall_scene(args.seed or 0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cloud, calib = generate_scene(scene)
    atomic_write(out / f"{args.name}.bin", write_lidar_bin(cloud))
    atomic_write(out / f"{args.name}.txt", format_kitti_calib(calib).encode("ascii"))
    print(f"points={len(cloud)} bin={out / (args.name + '.bin')} calib={out / (args.name + '.txt')}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="occugrid", description="Occupancy label generation from LiDAR.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, io=True):
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--preset", choices=["kitti", "waymo"], help="base configuration (default kitti)")
        if io:
            p.add_argument("--points", help="KITTI velodyne .bin point cloud")
            p.add_argument("--calib", help="KITTI calibration .txt")
            p.add_argument("--out", help="output OCC3 file or directory")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("gen-frustum", help="frustum occupancy labels")
    common(p)
    p.set_defaults(func=cmd_gen_frustum)

    p = sub.add_parser("gen-voxel", help="3D voxel occupancy labels")
    common(p)
    p.add_argument("--threads", type=int, help=f"worker threads (fallback ${THREADS_ENV})")
    p.set_defaults(func=cmd_gen_voxel)

    p = sub.add_parser("verify", help="run the oracle self checks")
    p.add_argument("--quick", action="store_true", help="reduced sample counts")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="throughput on a generated scene")
    p.add_argument("--num-points", type=int, default=100_000)
    p.add_argument("--grid", type=int, default=64, help="cubic grid side in voxels")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--threads", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("stats", help="status counts of an OCC3 file")
    p.add_argument("file")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("export-ply", help="voxel centers of a VOXEL OCC3 file as ASCII PLY")
    p.add_argument("file")
    p.add_argument("--out", required=True)
    p.add_argument("--which", default="occupied", choices=["occupied", "free", "unknown", "known", "all"])
    p.set_defaults(func=cmd_export_ply)

    p = sub.add_parser("make-scene", help="write a synthetic frame for testing")
    common(p, io=False)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--name", default="scene")
    p.set_defaults(func=cmd_make_scene)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, OccugridError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
