"""Presets and YAML run configuration.

A config file is a YAML mapping; every section is optional and falls back to
the selected preset::

    preset: kitti            # or waymo
    voxel_grid:
      range: [2.0, -30.08, -3.0, 46.8, 30.08, 1.0]   # x_min y_min z_min x_max y_max z_max
      voxel_size: [0.16, 0.16, 0.16]
    frustum_grid:
      width: 320             # feature columns
      height: 96             # feature rows
      downsample: 4
      depth_min: 2.0
      depth_max: 46.8
      depth_bins: 80
      discretization: LID    # or UNIFORM
    loss: {alpha: 0.25, gamma: 2.0, lambda: 1.0}
    run: {points: ..., calib: ..., out: ..., threads: 1, seed: 0}
    scene:                   # synthetic scene, see scene_oracle
      seed: 0
      camera: {position: [0, 0, 0], yaw_deg: 0, focal: 720, image_size: [1280, 384]}
      slabs:
        - {lo: [20, -10, -2.5], hi: [20.5, 10, 0.9], density: 60}
"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .errors import ConfigError
from .geometry import FrustumGridSpec, VoxelGridSpec
from .occupancy_math import LossConfig
from .scene_oracle import CameraPose, Slab, SyntheticScene

PRESETS: dict[str, dict[str, Any]] = {
    # 1280x384 input image, stride 4
    "kitti": {
        "voxel_grid": {"range": [2.0, -30.08, -3.0, 46.8, 30.08, 1.0],
                       "voxel_size": [0.16, 0.16, 0.16]},
        "frustum_grid": {"width": 320, "height": 96, "downsample": 4, "depth_min": 2.0,
                         "depth_max": 46.8, "depth_bins": 80, "discretization": "LID"},
    },
    # 960x640 input image, stride 4
    "waymo": {
        "voxel_grid": {"range": [2.0, -25.6, -2.0, 59.6, 25.6, 2.0],
                       "voxel_size": [0.16, 0.16, 0.16]},
        "frustum_grid": {"width": 240, "height": 160, "downsample": 4, "depth_min": 2.0,
                         "depth_max": 59.6, "depth_bins": 80, "discretization": "LID"},
    },
}

_SECTIONS = {"preset", "voxel_grid", "frustum_grid", "loss", "run", "scene"}
_RUN_KEYS = {"points", "calib", "out", "threads", "seed"}


@dataclass
class RunConfig:
    voxel: VoxelGridSpec
    frustum: FrustumGridSpec
    loss: LossConfig = field(default_factory=LossConfig)
    points: Optional[Path] = None
    calib: Optional[Path] = None
    out: Optional[Path] = None
    threads: int = 1
    seed: int = 0
    scene: Optional[SyntheticScene] = None


def voxel_spec_from_dict(d: dict) -> VoxelGridSpec:
    try:
        rng = [float(v) for v in d["range"]]
        size = [float(v) for v in d["voxel_size"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"voxel_grid needs numeric 'range' and 'voxel_size': {exc}") from None
    if len(rng) != 6 or len(size) != 3:
        raise ConfigError("voxel_grid.range needs 6 values and voxel_size 3")
    return VoxelGridSpec.from_range(rng[:3], rng[3:], size)


def frustum_spec_from_dict(d: dict) -> FrustumGridSpec:
    try:
        return FrustumGridSpec(**d)
    except TypeError as exc:
        raise ConfigError(f"frustum_grid: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"frustum_grid: {exc}") from None


def loss_from_dict(d: dict) -> LossConfig:
    d = dict(d)
    if "lambda" in d:
        d["lam"] = d.pop("lambda")
    try:
        return LossConfig(**{k: float(v) for k, v in d.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"loss: {exc}") from None


def scene_from_dict(d: dict) -> SyntheticScene:
    try:
        cam = dict(d.get("camera", {}))
        if "position" in cam:
            cam["position"] = tuple(float(v) for v in cam["position"])
        if "image_size" in cam:
            cam["image_size"] = tuple(int(v) for v in cam["image_size"])
        slabs = tuple(Slab(tuple(s["lo"]), tuple(s["hi"]), float(s.get("density", 50.0)))
                      for s in d.get("slabs", []))
        return SyntheticScene(slabs, CameraPose(**cam), int(d.get("seed", 0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"scene: {exc}") from None


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config_dict(path: Optional[os.PathLike] = None, preset: Optional[str] = None) -> dict:
    raw: dict = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        try:
            raw = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must be a mapping")
        unknown = set(raw) - _SECTIONS
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    name = (preset or raw.get("preset") or "kitti").lower()
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return _merge(PRESETS[name], {k: v for k, v in raw.items() if k != "preset"})


def build_run_config(d: dict, **overrides) -> RunConfig:
    """Assemble a RunConfig from a merged config dict; keyword overrides (CLI flags) win."""
    run = dict(d.get("run", {}))
    unknown = set(run) - _RUN_KEYS
    if unknown:
        raise ConfigError(f"unknown run keys: {sorted(unknown)}")
    run.update({k: v for k, v in overrides.items() if v is not None})
    threads = int(run.get("threads", 1))
    if threads < 1:
        raise ConfigError("threads must be >= 1")
    return RunConfig(
        voxel=voxel_spec_from_dict(d["voxel_grid"]),
        frustum=frustum_spec_from_dict(d["frustum_grid"]),
        loss=loss_from_dict(d.get("loss", {})),
        points=Path(run["points"]) if run.get("points") else None,
        calib=Path(run["calib"]) if run.get("calib") else None,
        out=Path(run["out"]) if run.get("out") else None,
        threads=threads,
        seed=int(run.get("seed", 0)),
        scene=scene_from_dict(d["scene"]) if "scene" in d else None,
    )


def load_config(path: Optional[os.PathLike] = None, preset: Optional[str] = None,
                **overrides) -> RunConfig:
    return build_run_config(load_config_dict(path, preset), **overrides)
