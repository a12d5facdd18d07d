import struct

import numpy as np
import pytest

from nbvkit.camera import Intrinsics, look_at
from nbvkit.errors import DomainError
from nbvkit.io import (read_mask_png, read_navd, read_ply, read_png, read_trajectory, write_mask_png,
                       write_navd, write_ply, write_png, write_trajectory)
from nbvkit.oracle import BUILTIN_SCENES, load_scene, save_scene
from nbvkit.pointcloud import DepthMap, PointCloud


def test_ply_roundtrip(tmp_path, rng):
    pos = rng.uniform(-1, 1, (100, 3)).astype(np.float32).astype(float)
    cols = rng.integers(0, 256, (100, 3)) / 255.0
    write_ply(tmp_path / "a.ply", PointCloud(pos, cols))
    back = read_ply(tmp_path / "a.ply")
    assert np.array_equal(back.positions, pos)
    assert np.allclose(back.colors, cols)
    write_ply(tmp_path / "b.ply", PointCloud(pos))
    assert read_ply(tmp_path / "b.ply").colors is None


def test_ply_header_layout(tmp_path):
    write_ply(tmp_path / "a.ply", PointCloud([[1.0, 2.0, 3.0]]))
    raw = (tmp_path / "a.ply").read_bytes()
    head, body = raw.split(b"end_header\n")
    assert b"binary_little_endian" in head
    assert struct.unpack("<3f", body) == (1.0, 2.0, 3.0)


def test_ply_rejects_garbage(tmp_path):
    (tmp_path / "x.ply").write_bytes(b"not a ply\n")
    with pytest.raises(DomainError):
        read_ply(tmp_path / "x.ply")


def test_navd_roundtrip(tmp_path, rng):
    vals = rng.uniform(0.5, 4, (6, 9)).astype(np.float32).astype(float)
    valid = rng.random((6, 9)) > 0.2
    write_navd(tmp_path / "d.navd", DepthMap(vals, valid))
    raw = (tmp_path / "d.navd").read_bytes()
    assert raw[:4] == b"NAVD" and struct.unpack("<III", raw[4:16]) == (9, 6, 0)
    back = read_navd(tmp_path / "d.navd")
    assert np.array_equal(back.valid, valid)
    assert np.array_equal(back.values[valid], vals[valid])


def test_navd_bad_input(tmp_path):
    (tmp_path / "bad.navd").write_bytes(b"XXXX" + bytes(12))
    with pytest.raises(DomainError):
        read_navd(tmp_path / "bad.navd")
    (tmp_path / "short.navd").write_bytes(b"NAVD" + struct.pack("<III", 2, 2, 0) + bytes(4))
    with pytest.raises(DomainError):
        read_navd(tmp_path / "short.navd")


def test_png_roundtrip(tmp_path, rng):
    img = rng.integers(0, 256, (5, 7, 3)) / 255.0
    write_png(tmp_path / "i.png", img)
    assert np.allclose(read_png(tmp_path / "i.png"), img)
    m = rng.random((5, 7)) > 0.5
    write_mask_png(tmp_path / "m.png", m)
    assert np.array_equal(read_mask_png(tmp_path / "m.png"), m)


def test_trajectory_roundtrip(tmp_path):
    intr = Intrinsics(50.0, 55.0, 16.0, 12.0, 32, 24)
    poses = [look_at([1, -2, 0.5], [0, 0, 0]), look_at([2, -1, 0.7], [0, 0, 0])]
    write_trajectory(tmp_path / "t.json", poses, intr)
    back, bi = read_trajectory(tmp_path / "t.json")
    assert bi == intr
    assert all(a == b for a, b in zip(poses, back))


@pytest.mark.parametrize("name", BUILTIN_SCENES)
def test_scene_roundtrip(tmp_path, name):
    s = load_scene(name)
    save_scene(tmp_path / "s.json", s)
    t = load_scene(tmp_path / "s.json")
    assert s.to_dict() == t.to_dict()


def test_missing_scene():
    with pytest.raises(FileNotFoundError):
        load_scene("/nonexistent/scene.json")
