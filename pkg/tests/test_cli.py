import json
import subprocess
import sys

import numpy as np
import pytest

from nbvkit.camera import Intrinsics, look_at
from nbvkit.cli import main
from nbvkit.io import read_navd, read_ply, read_png, write_mask_png, write_navd, write_ply, write_trajectory
from nbvkit.oracle import gt_cloud, load_scene, synthesize_views
from nbvkit.pointcloud import DepthMap, PointCloud

SMALL = {"seed": 3, "scene": "room",
         "planner": {"n_steps": 2, "k_candidates": 3, "frames_per_segment": 5},
         "intrinsics": {"fx": 27.7, "fy": 27.7, "cx": 16.0, "cy": 12.0, "width": 32, "height": 24}}


@pytest.fixture
def small_config(tmp_path):
    p = tmp_path / "run.json"
    p.write_text(json.dumps(SMALL))
    return p


def tree_bytes(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_plan_writes_outputs_deterministically(tmp_path, small_config):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["plan", "--config", str(small_config), "--out", str(a)]) == 0
    assert main(["plan", "--config", str(small_config), "--out", str(b)]) == 0
    ta = tree_bytes(a)
    assert ta == tree_bytes(b)
    assert {"config.json", "steps.json", "cloud.ply", "initial_cloud.ply"} <= set(ta)
    cfg = json.loads((a / "config.json").read_text())
    assert cfg["planner"]["seed"] == 3 and cfg["planner"]["n_steps"] == 2
    steps = json.loads((a / "steps.json").read_text())
    assert len(steps["steps"]) >= 1
    assert len(read_ply(a / "cloud.ply")) >= len(read_ply(a / "initial_cloud.ply"))


def test_flags_override_config(tmp_path, small_config):
    out = tmp_path / "o"
    assert main(["plan", "--config", str(small_config), "--seed", "5", "--noise-sigma", "0.01",
                 "--out", str(out)]) == 0
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["planner"]["seed"] == 5 and cfg["noise"]["depth_sigma"] == 0.01


def test_baseline_plan(tmp_path, small_config):
    out = tmp_path / "base"
    assert main(["baseline-plan", "--config", str(small_config), "--out", str(out)]) == 0
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["planner"]["collision_aware"] is False


def test_eval_identical_clouds(tmp_path, capsys):
    c = PointCloud(np.random.default_rng(0).uniform(0, 1, (200, 3)))
    write_ply(tmp_path / "c.ply", c)
    assert main(["eval", str(tmp_path / "c.ply"), "--gt", str(tmp_path / "c.ply"),
                 "--out", str(tmp_path / "r.json")]) == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["coverage"] == 100.0 and rep["noise_ratio"] == 0.0 and rep["fscore"] == 1.0
    assert "Coverage" in capsys.readouterr().out


def test_eval_against_scene(tmp_path):
    gt = gt_cloud(load_scene("pillars"), 500.0, seed=0)
    write_ply(tmp_path / "p.ply", gt)
    assert main(["eval", str(tmp_path / "p.ply"), "--scene", "pillars", "--density", "500",
                 "--out", str(tmp_path / "r.json")]) == 0
    assert json.loads((tmp_path / "r.json").read_text())["coverage"] == 100.0
    assert main(["eval", str(tmp_path / "p.ply")]) == 1


def test_calibrate_files(tmp_path):
    rng = np.random.default_rng(1)
    d_m = rng.uniform(0.5, 5, (32, 32)).astype(np.float32).astype(float)
    d_v = 1.0 / (2.0 / d_m + 0.1)
    write_navd(tmp_path / "m.navd", DepthMap(d_m, np.ones_like(d_m, bool)))
    write_navd(tmp_path / "v.navd", DepthMap(d_v, np.ones_like(d_m, bool)))
    assert main(["calibrate", str(tmp_path / "m.navd"), str(tmp_path / "v.navd"),
                 "--out", str(tmp_path / "p.json"), "--apply-out", str(tmp_path / "c.navd")]) == 0
    p = json.loads((tmp_path / "p.json").read_text())
    # depths pass through float32 on disk, so the fit is exact only to single precision
    assert abs(p["scale"] - 2.0) <= 1e-5 and abs(p["bias"] - 0.1) <= 1e-5
    assert set(p) == {"scale", "bias", "residual", "pixels_used"}
    cal = read_navd(tmp_path / "c.navd")
    assert np.allclose(cal.values, d_v, rtol=1e-5)
    write_navd(tmp_path / "m.navd", DepthMap(d_m, np.ones_like(d_m, bool)))
    assert main(["calibrate", str(tmp_path / "m.navd"), str(tmp_path / "m.navd")]) == 0
    # constant inverse depth is rank deficient
    write_navd(tmp_path / "k.navd", DepthMap(np.full((4, 4), 2.0), np.ones((4, 4), bool)))
    assert main(["calibrate", str(tmp_path / "k.navd"), str(tmp_path / "k.navd")]) == 2


def test_calibrate_with_mask(tmp_path):
    rng = np.random.default_rng(2)
    d_m = rng.uniform(0.5, 5, (8, 8))
    d_v = 1.0 / (2.0 / d_m + 0.1)
    d_v_bad = d_v.copy()
    mask = rng.random((8, 8)) > 0.5
    d_v_bad[~mask] = 50.0
    write_navd(tmp_path / "m.navd", DepthMap(d_m, np.ones((8, 8), bool)))
    write_navd(tmp_path / "v.navd", DepthMap(d_v_bad, np.ones((8, 8), bool)))
    write_mask_png(tmp_path / "mask.png", mask)
    assert main(["calibrate", str(tmp_path / "m.navd"), str(tmp_path / "v.navd"), "--mask",
                 str(tmp_path / "mask.png"), "--out", str(tmp_path / "p.json")]) == 0
    p = json.loads((tmp_path / "p.json").read_text())
    assert abs(p["scale"] - 2.0) <= 1e-4 and p["pixels_used"] == int(mask.sum())


def traj_file(tmp_path, intr):
    poses = [look_at([0.0, -0.9, 0.4], [0.0, 0.0, 0.2]), look_at([0.3, -0.85, 0.4], [0.0, 0.0, 0.2])]
    write_trajectory(tmp_path / "t.json", poses, intr)
    return poses


def test_render_empty_gaussian_scene(tmp_path):
    intr = Intrinsics(10.0, 10.0, 4.0, 3.0, 8, 6)
    traj_file(tmp_path, intr)
    (tmp_path / "g.json").write_text(json.dumps({"background": [0.2, 0.4, 0.6], "gaussians": []}))
    assert main(["render", str(tmp_path / "g.json"), str(tmp_path / "t.json"), "--out", str(tmp_path / "r")]) == 0
    img = read_png(tmp_path / "r" / "frame_001.png")
    assert np.allclose(img, np.round(np.array([0.2, 0.4, 0.6]) * 255) / 255)


def test_render_synthetic_matches_library(tmp_path):
    intr = Intrinsics(10.0, 10.0, 4.0, 3.0, 8, 6)
    poses = traj_file(tmp_path, intr)
    assert main(["render", "room", str(tmp_path / "t.json"), "--mode", "synthetic",
                 "--out", str(tmp_path / "r")]) == 0
    views = synthesize_views(load_scene("room"), poses, intr)
    for i, v in enumerate(views):
        d = read_navd(tmp_path / "r" / f"frame_{i:03d}.navd")
        assert np.array_equal(d.valid, v.depth.valid)
        assert np.array_equal(d.values[d.valid], v.depth.values[d.valid].astype(np.float32))


def test_scene_gen(tmp_path):
    assert main(["scene-gen", "--scene", "corridor", "--density", "300", "--seed", "2",
                 "--out", str(tmp_path / "gt.ply")]) == 0
    c = read_ply(tmp_path / "gt.ply")
    ref = gt_cloud(load_scene("corridor"), 300.0, seed=2)
    assert np.array_equal(c.positions, ref.positions.astype(np.float32))


def test_exit_codes(tmp_path):
    assert main([]) == 1
    assert main(["plan"]) == 1  # --out is required
    assert main(["bogus"]) == 1
    assert main(["plan", "--scene", str(tmp_path / "missing.json"), "--out", str(tmp_path / "x")]) == 2
    (tmp_path / "bad.json").write_text("[1, 2]")
    assert main(["plan", "--config", str(tmp_path / "bad.json"), "--out", str(tmp_path / "x")]) == 2


def test_console_entry_point_help():
    r = subprocess.run([sys.executable, "-m", "nbvkit.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("plan", "baseline-plan", "eval", "calibrate", "render", "scene-gen"):
        assert cmd in r.stdout
