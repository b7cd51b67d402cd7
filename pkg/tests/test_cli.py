import re
import subprocess
import sys
import time

import pytest

from occugrid.cli import main
from occugrid.io_formats import Occ3Header, read_occ3
from occugrid.labels import Space


def parse_kv(text):
    return dict(re.findall(r"(\w+)=(\S+)", text))


@pytest.fixture(scope="module")
def frame(tmp_path_factory):
    d = tmp_path_factory.mktemp("frame")
    assert main(["make-scene", "--out", str(d), "--name", "f"]) == 0
    return d / "f.bin", d / "f.txt"


def test_gen_frustum_stats_and_determinism(frame, tmp_path, capsys):
    pts, calib = frame
    out = tmp_path / "a.occ3"
    assert main(["gen-frustum", "--points", str(pts), "--calib", str(calib), "--out", str(out)]) == 0
    stats = parse_kv(capsys.readouterr().out)
    assert int(stats["valid_pixels"]) > 0
    assert stats["occupied"] == stats["valid_pixels"]
    first = out.read_bytes()
    assert main(["gen-frustum", "--points", str(pts), "--calib", str(calib), "--out", str(out)]) == 0
    assert out.read_bytes() == first
    grid = read_occ3(first)
    assert grid.space is Space.FRUSTUM and grid.shape == (96, 320, 80)


def test_missing_calib_exit2(frame, tmp_path, capsys):
    pts, _ = frame
    missing = tmp_path / "no_such_calib.txt"
    out = tmp_path / "x.occ3"
    assert main(["gen-frustum", "--points", str(pts), "--calib", str(missing), "--out", str(out)]) == 2
    assert str(missing) in capsys.readouterr().err
    assert not out.exists()


def test_gen_voxel_dims_and_threads(frame, tmp_path, capsys):
    pts, calib = frame
    a, b = tmp_path / "t1.occ3", tmp_path / "t8.occ3"
    assert main(["gen-voxel", "--points", str(pts), "--calib", str(calib), "--out", str(a), "--threads", "1"]) == 0
    stats = parse_kv(capsys.readouterr().out)
    assert "occupied_fraction" in stats and "free_fraction" in stats and "unknown_fraction" in stats
    assert main(["gen-voxel", "--points", str(pts), "--calib", str(calib), "--out", str(b), "--threads", "8"]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert Occ3Header.decode(a.read_bytes()).dims == (280, 376, 25)


def test_gen_voxel_waymo_and_out_dir(frame, tmp_path, capsys):
    pts, calib = frame
    assert main(["gen-voxel", "--preset", "waymo", "--points", str(pts), "--calib", str(calib),
                 "--out", str(tmp_path)]) == 0
    written = tmp_path / "f_voxel.occ3"
    assert Occ3Header.decode(written.read_bytes()).dims == (360, 320, 25)


def test_threads_env_fallback(frame, tmp_path, monkeypatch):
    pts, calib = frame
    monkeypatch.setenv("OCCUGRID_THREADS", "3")
    args = ["gen-voxel", "--points", str(pts), "--calib", str(calib), "--out", str(tmp_path / "e.occ3")]
    assert main(args) == 0
    monkeypatch.setenv("OCCUGRID_THREADS", "many")
    assert main(args) == 2
    monkeypatch.setenv("OCCUGRID_THREADS", "0")
    assert main(args) == 2


def test_config_run_section_and_flag_override(frame, tmp_path):
    pts, calib = frame
    cfg = tmp_path / "run.yaml"
    cfg.write_text(f"run: {{points: {pts}, calib: {calib}, out: {tmp_path / 'from_cfg.occ3'}}}\n")
    assert main(["gen-frustum", "--config", str(cfg)]) == 0
    assert (tmp_path / "from_cfg.occ3").exists()
    assert main(["gen-frustum", "--config", str(cfg), "--out", str(tmp_path / "flag.occ3")]) == 0
    assert (tmp_path / "flag.occ3").exists()


def test_input_errors(frame, tmp_path, capsys):
    pts, calib = frame
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"\x00" * 17)
    assert main(["gen-frustum", "--points", str(bad), "--calib", str(calib), "--out", str(tmp_path / "o")]) == 2
    assert main(["gen-frustum", "--points", str(pts), "--calib", str(calib),
                 "--out", str(tmp_path / "missing_dir" / "o.occ3")]) == 2
    badcfg = tmp_path / "bad.yaml"
    badcfg.write_text("loss: {alpha: 7}\n")
    assert main(["gen-voxel", "--config", str(badcfg), "--points", str(pts), "--calib", str(calib),
                 "--out", str(tmp_path)]) == 2
    assert main(["gen-voxel", "--calib", str(calib), "--out", str(tmp_path)]) == 2
    assert "error:" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["gen-voxel", "--threads", "lots"])
    assert exc.value.code == 2


def test_stats_and_ply(frame, tmp_path, capsys):
    pts, calib = frame
    vox, fru = tmp_path / "v.occ3", tmp_path / "f.occ3"
    main(["gen-voxel", "--points", str(pts), "--calib", str(calib), "--out", str(vox)])
    main(["gen-frustum", "--points", str(pts), "--calib", str(calib), "--out", str(fru)])
    capsys.readouterr()
    assert main(["stats", str(vox)]) == 0
    stats = parse_kv(capsys.readouterr().out)
    assert stats["space"] == "VOXEL" and int(stats["total"]) == 280 * 376 * 25
    ply = tmp_path / "v.ply"
    assert main(["export-ply", str(vox), "--out", str(ply)]) == 0
    assert f"element vertex {stats['occupied']}\n" in ply.read_text()
    assert main(["export-ply", str(fru), "--out", str(tmp_path / "f.ply")]) == 2
    assert main(["stats", str(tmp_path / "none.occ3")]) == 2
    (tmp_path / "junk.occ3").write_bytes(b"OCC3junk")
    assert main(["stats", str(tmp_path / "junk.occ3")]) == 2


def test_verify_quick_and_fault(capsys):
    t = time.perf_counter()
    assert main(["verify", "--quick"]) == 0
    assert time.perf_counter() - t < 10.0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") == 6
    assert main(["verify", "--quick", "--inject-fault"]) == 1
    out = capsys.readouterr().out
    assert "FAIL traversal_oracle" in out and "failed: traversal_oracle" in out


def test_bench_report(capsys):
    assert main(["bench", "--num-points", "100000", "--grid", "64", "--repeats", "2", "--threads", "1"]) == 0
    one = capsys.readouterr().out
    assert main(["bench", "--num-points", "100000", "--grid", "64", "--repeats", "2", "--threads", "4"]) == 0
    four = capsys.readouterr().out
    for report in (one, four):
        assert re.search(r"min=\S+ median=\S+ max=\S+", report)
        rate = float(re.search(r"voxels_visited/s=(\S+)", report).group(1))
        assert rate > 0
    visited = [re.search(r"voxels_visited=(\d+)", r).group(1) for r in (one, four)]
    assert visited[0] == visited[1]


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "occugrid", "make-scene", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "scene.bin").exists() and (tmp_path / "scene.txt").exists()
