import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import identity_calib, random_rigid, tiny_frustum
from occugrid.errors import CalibrationError, ConfigError
from occugrid.geometry import (OUT_OF_RANGE, Calibration, FrustumGridSpec, PointCloud, VoxelGridSpec,
                               bin_to_depth, clip_segment_to_grid, continuous_bin, depth_to_bin,
                               format_kitti_calib, lidar_to_camera, parse_kitti_calib, project_to_image,
                               voxel_index_of, voxel_indices)
from occugrid.scene_oracle import random_segments


def test_principal_ray_projects_to_principal_point():
    calib = identity_calib(f=721.5, cu=609.6, cv=172.9)
    cam = lidar_to_camera(calib, np.array([[0.0, 0.0, 10.0]]))
    proj = project_to_image(calib, cam)
    assert proj.valid[0]
    np.testing.assert_allclose(proj.uvd[0], [609.6, 172.9, 10.0], rtol=0, atol=1e-12)


def test_missing_key_names_it(kitti_calib_text):
    text = "\n".join(l for l in kitti_calib_text.splitlines() if not l.startswith("Tr_velo_to_cam"))
    with pytest.raises(CalibrationError, match="Tr_velo_to_cam"):
        parse_kitti_calib(text)


def test_bad_entry_count_names_line(kitti_calib_text):
    text = kitti_calib_text.replace("R0_rect: 9.999239000000e-01", "R0_rect:")
    with pytest.raises(CalibrationError, match="line 2"):
        parse_kitti_calib(text)


def test_non_orthonormal_rect_rejected():
    with pytest.raises(CalibrationError):
        Calibration(identity_calib().intrinsic, rect=np.diag([1.0, 1.0, 1.1]))


def test_kitti_frame_against_plain_matmul(kitti_calib, kitti_calib_text):
    # plain-Python matrix products, no numpy on the reference path
    rows = {}
    for line in kitti_calib_text.splitlines():
        key, vals = line.split(":")
        rows[key] = [float(v) for v in vals.split()]
    P = [rows["P2"][i * 4:(i + 1) * 4] for i in range(3)]
    R = [rows["R0_rect"][i * 3:(i + 1) * 3] for i in range(3)]
    T = [rows["Tr_velo_to_cam"][i * 4:(i + 1) * 4] for i in range(3)]

    rng = np.random.default_rng(3)
    pts = np.column_stack([rng.uniform(5, 60, 200), rng.uniform(-20, 20, 200), rng.uniform(-2, 2, 200)])
    proj = project_to_image(kitti_calib, lidar_to_camera(kitti_calib, pts))
    assert np.all(proj.valid)
    assert np.all(proj.uvd[:, 2] > 0)
    for (x, y, z), got in zip(pts.tolist(), proj.uvd):
        c0 = [T[r][0] * x + T[r][1] * y + T[r][2] * z + T[r][3] for r in range(3)]
        c = [R[r][0] * c0[0] + R[r][1] * c0[1] + R[r][2] * c0[2] for r in range(3)]
        h = [P[r][0] * c[0] + P[r][1] * c[1] + P[r][2] * c[2] + P[r][3] for r in range(3)]
        assert got[0] == pytest.approx(h[0] / h[2], abs=1e-9)
        assert got[1] == pytest.approx(h[1] / h[2], abs=1e-9)
        assert got[2] == pytest.approx(c[2], abs=1e-12)


def test_calib_format_round_trip(kitti_calib):
    again = parse_kitti_calib(format_kitti_calib(kitti_calib))
    np.testing.assert_array_equal(again.intrinsic, kitti_calib.intrinsic)
    np.testing.assert_array_equal(again.rect, kitti_calib.rect)
    np.testing.assert_array_equal(again.lidar_to_cam, kitti_calib.lidar_to_cam)


def test_camera_center_maps_to_origin(kitti_calib):
    c = kitti_calib.camera_center_lidar()
    np.testing.assert_allclose(lidar_to_camera(kitti_calib, c[None]), 0.0, atol=1e-12)


def test_identity_and_translation():
    calib = identity_calib()
    np.testing.assert_array_equal(lidar_to_camera(calib, np.array([[1.0, 2.0, 3.0]])), [[1.0, 2.0, 3.0]])
    t = np.eye(4)
    t[:3, 3] = [0.5, -1.0, 2.0]
    moved = Calibration(calib.intrinsic, lidar_to_cam=t)
    np.testing.assert_allclose(lidar_to_camera(moved, PointCloud([[1.0, 2.0, 3.0]])), [[1.5, 1.0, 5.0]])


@pytest.mark.parametrize("seed", range(5))
def test_isometry(seed):
    rng = np.random.default_rng(seed)
    calib = Calibration(identity_calib().intrinsic, lidar_to_cam=random_rigid(rng))
    pts = rng.normal(scale=20.0, size=(100, 3))
    cam = lidar_to_camera(calib, pts)
    d0 = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    d1 = np.linalg.norm(cam[:, None] - cam[None], axis=-1)
    assert np.max(np.abs(d0 - d1)) < 1e-9


def test_behind_camera_invalid():
    calib = identity_calib()
    proj = project_to_image(calib, np.array([[0.0, 0.0, -1.0], [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]]))
    assert proj.valid.tolist() == [False, False, True]


def test_projection_flags_match_scalar_oracle():
    rng = np.random.default_rng(7)
    calib = identity_calib(f=80.0, cu=40.0, cv=30.0)
    cam = np.column_stack([rng.uniform(-20, 20, 1000), rng.uniform(-20, 20, 1000), rng.uniform(-5, 30, 1000)])
    proj = project_to_image(calib, cam, (80, 60))
    for (x, y, z), ok in zip(cam.tolist(), proj.valid):
        if z <= 0:
            expect = False
        else:
            u, v = (80.0 * x + 40.0 * z) / z, (80.0 * y + 30.0 * z) / z
            expect = 0 <= u < 80 and 0 <= v < 60
        assert ok == expect


def test_lid_edge_table():
    spec = tiny_frustum("LID")
    assert spec.lid_delta == pytest.approx(0.8, abs=1e-15)
    np.testing.assert_allclose(spec.bin_edges, [2.0, 2.8, 4.4, 6.8, 10.0], atol=1e-12)


def test_depth_to_bin_examples():
    assert depth_to_bin(tiny_frustum("UNIFORM"), 3.0) == 0
    assert depth_to_bin(tiny_frustum("LID"), 3.0) == 1
    for disc in ("UNIFORM", "LID"):
        spec = tiny_frustum(disc)
        assert depth_to_bin(spec, 10.0) == OUT_OF_RANGE
        assert depth_to_bin(spec, 1.999) == OUT_OF_RANGE
        assert depth_to_bin(spec, 2.0) == 0


def test_bin_to_depth_examples():
    assert bin_to_depth(tiny_frustum("UNIFORM"), 0) == pytest.approx(3.0, abs=1e-12)
    assert bin_to_depth(tiny_frustum("LID"), 1) == pytest.approx(3.6, abs=1e-12)
    with pytest.raises(ValueError):
        bin_to_depth(tiny_frustum(), 4)


@pytest.mark.parametrize("disc", ["UNIFORM", "LID"])
@pytest.mark.parametrize("bins", [1, 4, 80])
def test_bin_round_trip_and_edges(disc, bins):
    spec = FrustumGridSpec(4, 4, depth_bins=bins, depth_min=2.0, depth_max=46.8, discretization=disc)
    b = np.arange(bins)
    np.testing.assert_array_equal(depth_to_bin(spec, bin_to_depth(spec, b)), b)
    # every left edge lands in its own bin
    np.testing.assert_array_equal(depth_to_bin(spec, spec.bin_edges[:-1]), b)
    assert np.all(np.diff(spec.bin_edges) > 0)
    assert abs(spec.bin_edges[-1] - 46.8) < 1e-9
    np.testing.assert_allclose(continuous_bin(spec, bin_to_depth(spec, b)), b, atol=1e-9)


@given(st.lists(st.floats(0.0, 60.0), min_size=2, max_size=50), st.sampled_from(["UNIFORM", "LID"]))
def test_depth_to_bin_monotone(depths, disc):
    spec = FrustumGridSpec(4, 4, depth_bins=80, discretization=disc)
    d = np.sort(np.array(depths))
    b = depth_to_bin(spec, d)
    inside = b >= 0
    assert np.all(np.diff(b[inside]) >= 0)


def test_voxel_index_examples(kitti_voxel_spec):
    assert voxel_index_of(kitti_voxel_spec, (2.08, -30.00, -2.92)) == (0, 0, 0)
    assert voxel_index_of(kitti_voxel_spec, (46.8, 30.08, 1.0)) is None
    assert voxel_index_of(kitti_voxel_spec, (1.99, 0.0, 0.0)) is None


def test_voxel_indices_match_scalar_oracle(kitti_voxel_spec):
    spec = kitti_voxel_spec
    rng = np.random.default_rng(11)
    pts = rng.uniform([0, -32, -4], [48, 32, 2], size=(10_000, 3))
    idx, inside = voxel_indices(spec, pts)
    for p, i, ok in zip(pts.tolist(), idx, inside):
        want = []
        for k in range(3):
            lo = spec.origin[k]
            hi = lo + spec.dims[k] * spec.voxel_size[k]
            if not lo <= p[k] < hi:
                want = None
                break
            want.append(min(int(math.floor((p[k] - lo) / spec.voxel_size[k])), spec.dims[k] - 1))
        assert (tuple(i) if ok else None) == (tuple(want) if want is not None else None)


def test_center_index_round_trip():
    spec = VoxelGridSpec((-1.0, 2.0, 0.5), (0.16, 0.3, 0.25), (9, 7, 5))
    idx = np.argwhere(np.ones(spec.dims, dtype=bool))
    back, inside = voxel_indices(spec, spec.voxel_centers(idx))
    assert inside.all()
    np.testing.assert_array_equal(back, idx)


def test_from_range_rejects_fractional():
    with pytest.raises(ConfigError):
        VoxelGridSpec.from_range((0, 0, 0), (1.0, 1.0, 1.05), (0.1, 0.1, 0.1))


def test_clip_inside_and_parallel_outside(unit_grid64):
    seg = clip_segment_to_grid(unit_grid64, (1.0, 2.0, 3.0), (10.0, 20.0, 30.0))
    np.testing.assert_array_equal(seg.start, [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(seg.end, [10.0, 20.0, 30.0])
    assert (seg.t_enter, seg.t_exit) == (0.0, 1.0)
    assert clip_segment_to_grid(unit_grid64, (-1.0, 5.0, 5.0), (-1.0, 50.0, 5.0)) is None


def _inside(spec, p):
    lo, hi = spec.origin_array, spec.upper
    return bool(np.all(p >= lo) and np.all(p <= hi))


def _bisect(spec, a, d, t_in, t_out):
    # t_in inside, t_out outside
    while abs(t_out - t_in) > 1e-13:
        mid = 0.5 * (t_in + t_out)
        if _inside(spec, a + mid * d):
            t_in = mid
        else:
            t_out = mid
    return t_in


def test_clip_against_sampling_oracle(unit_grid64):
    spec = unit_grid64
    rng = np.random.default_rng(5)
    ts = np.linspace(0.0, 1.0, 10_000)
    for a, b in random_segments(rng, 1000, (-8, -8, -8), (72, 72, 72)):
        d = b - a
        pts = a + ts[:, None] * d
        inside = np.all((pts >= spec.origin_array) & (pts <= spec.upper), axis=1)
        seg = clip_segment_to_grid(spec, a, b)
        if not inside.any():
            # a sliver shorter than the sample spacing can hide between samples
            assert seg is None or seg.t_exit - seg.t_enter < 2e-4
            continue
        assert seg is not None
        assert 0.0 <= seg.t_enter <= seg.t_exit <= 1.0
        first, last = np.argmax(inside), len(ts) - 1 - np.argmax(inside[::-1])
        t_enter = ts[0] if first == 0 else _bisect(spec, a, d, ts[first], ts[first - 1])
        t_exit = ts[-1] if last == len(ts) - 1 else _bisect(spec, a, d, ts[last], ts[last + 1])
        np.testing.assert_allclose(seg.start, a + t_enter * d, atol=1e-9)
        np.testing.assert_allclose(seg.end, a + t_exit * d, atol=1e-9)
