"""Command-line entry point.

    nbvkit plan            --scene pillars --seed 7 --out runs/p7
    nbvkit baseline-plan   --scene pillars --seed 7 --out runs/b7
    nbvkit eval            runs/p7/cloud.ply --scene pillars
    nbvkit calibrate       mono.navd metric.navd --mask sky.png
    nbvkit render          scene.json traj.json --mode gaussian --out frames/
    nbvkit scene-gen       --scene room --out room_gt.ply

Exit status: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

from nbvkit.benchmark import GT_DENSITY, default_config, default_intrinsics, default_noise
from nbvkit.calibration import apply_calibration, calibrate
from nbvkit.camera import Intrinsics
from nbvkit.errors import DomainError
from nbvkit.io import (read_mask_png, read_navd, read_ply, read_trajectory, write_navd, write_ply,
                       write_png, write_trajectory)
from nbvkit.metrics import DEFAULT_TAU, recon_report
from nbvkit.oracle import NoiseModel, SceneOracle, gt_cloud, load_scene, synthesize_views
from nbvkit.planner import PlannerConfig, plan
from nbvkit.splat import load_gaussians, render_image

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True)


def _load_config(path) -> dict:
    if path is None:
        return {}
    d = json.loads(Path(path).read_text())
    if not isinstance(d, dict):
        raise DomainError(f"{path}: config must be a JSON object")
    return d


# --- plan / baseline-plan ------------------------------------------------------

def resolve_run(args, collision_aware: bool):
    """Merge the config file with flag overrides (flags win)."""
    cfg = _load_config(args.config)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    scene_ref = args.scene or cfg.get("scene", "room")

    planner = asdict(default_config(seed))
    planner.update(cfg.get("planner", {}))
    planner["seed"] = seed
    planner["collision_aware"] = collision_aware
    config = PlannerConfig.from_dict(planner)

    noise_d = asdict(default_noise(seed))
    noise_d.update(cfg.get("noise", {}))
    noise_d["seed"] = seed
    if args.noise_sigma is not None:
        noise_d["depth_sigma"] = args.noise_sigma
    if args.dropout is not None:
        noise_d["dropout_ratio"] = args.dropout
    noise = NoiseModel(**noise_d)

    intr = Intrinsics.from_dict(cfg["intrinsics"]) if "intrinsics" in cfg else default_intrinsics()
    return scene_ref, config, noise, intr


def write_plan(out: Path, result, config: PlannerConfig, noise: NoiseModel, intr: Intrinsics, scene_ref) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "segments").mkdir(exist_ok=True)
    (out / "views").mkdir(exist_ok=True)
    run = {"scene": str(scene_ref), "planner": config.to_dict(), "noise": asdict(noise),
           "intrinsics": intr.to_dict()}
    (out / "config.json").write_text(_dump(run))
    write_ply(out / "initial_cloud.ply", result.initial_cloud)
    write_ply(out / "cloud.ply", result.cloud)
    for i, seg in enumerate(result.segments):
        write_trajectory(out / "segments" / f"segment_{i:03d}.json", seg, intr)
    for i, views in enumerate(result.views):
        for j, v in enumerate(views):
            stem = out / "views" / f"seg{i:03d}_frame{j:03d}"
            write_png(stem.with_suffix(".png"), v.image)
            write_navd(stem.with_suffix(".navd"), v.depth)
    steps = {"failed": result.failed, "failure_reason": result.failure_reason,
             "points_initial": len(result.initial_cloud), "points_final": len(result.cloud),
             "steps": [r.to_dict() for r in result.reports]}
    (out / "steps.json").write_text(_dump(steps))


def cmd_plan(args, collision_aware: bool = True) -> int:
    scene_ref, config, noise, intr = resolve_run(args, collision_aware)
    scene = load_scene(scene_ref)
    oracle = SceneOracle(scene, intr, noise)
    result = plan(oracle, oracle.reference_views(), config, scene_center=scene.scene_center)
    write_plan(Path(args.out), result, config, noise, intr, scene_ref)
    label = "planner" if collision_aware else "baseline"
    for r in result.reports:
        print(f"[{label}] step {r.step}: chosen={r.chosen_index} fill={r.fill_ratio:.3f} "
              f"optimized={r.optimized} hinge {r.hinge_pre:.4g}->{r.hinge_post:.4g}"
              + (f" FAILED: {r.message}" if r.failed else ""))
    print(f"[{label}] {len(result.initial_cloud)} -> {len(result.cloud)} points, wrote {args.out}")
    if result.failed:
        print(f"[{label}] planning stopped early: {result.failure_reason}", file=sys.stderr)
    return EXIT_OK


def cmd_baseline_plan(args) -> int:
    return cmd_plan(args, collision_aware=False)


# --- eval / calibrate ------------------------------------------------------------

def cmd_eval(args) -> int:
    pred = read_ply(args.pred)
    if args.gt is not None:
        gt = read_ply(args.gt)
    elif args.scene is not None:
        gt = gt_cloud(load_scene(args.scene), args.density, seed=args.seed or 0)
    else:
        raise UsageError("eval needs --gt or --scene")
    rep = recon_report(pred, gt, args.tau)
    print("| Prediction | Coverage (%) | Noise Ratio | F-score | Runtime (s) |")
    print(rep.row(Path(args.pred).name))
    if args.out:
        Path(args.out).write_text(_dump(rep.to_dict()))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    d_m = read_navd(args.d_m)
    d_v = read_navd(args.d_v)
    mask = read_mask_png(args.mask) if args.mask else None
    params = calibrate(d_m, d_v, mask)
    text = _dump(params.to_dict())
    print(text)
    if args.out:
        Path(args.out).write_text(text)
    if args.apply_out:
        write_navd(args.apply_out, apply_calibration(d_m, params))
    return EXIT_OK


# --- render / scene-gen ------------------------------------------------------------

def cmd_render(args) -> int:
    poses, intr = read_trajectory(args.trajectory)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.mode == "gaussian":
        scene = load_gaussians(args.scene_file)
        for i, pose in enumerate(poses):
            image, _, depth = render_image(scene, pose, intr)
            write_png(out / f"frame_{i:03d}.png", image)
            write_navd(out / f"frame_{i:03d}.navd", depth)
    else:
        scene = load_scene(args.scene_file)
        noise = None
        if args.noise_sigma or args.dropout:
            noise = NoiseModel(depth_sigma=args.noise_sigma or 0.0, dropout_ratio=args.dropout or 0.0,
                               seed=args.seed or 0)
        for i, v in enumerate(synthesize_views(scene, poses, intr, noise)):
            write_png(out / f"frame_{i:03d}.png", v.image)
            write_navd(out / f"frame_{i:03d}.navd", v.depth)
    print(f"rendered {len(poses)} frames to {out}")
    return EXIT_OK


def cmd_scene_gen(args) -> int:
    cloud = gt_cloud(load_scene(args.scene), args.density, seed=args.seed or 0)
    write_ply(args.out, cloud)
    print(f"wrote {len(cloud)} ground-truth points to {args.out}")
    return EXIT_OK


# --- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nbvkit", description="Collision-aware view planning toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, help_ in (("plan", "collision-aware planning run"),
                        ("baseline-plan", "same loop without collision checks or trajectory repair")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--scene", help="built-in scene name or scene JSON path")
        sp.add_argument("--config", help="JSON config with planner/noise/intrinsics sections")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--noise-sigma", type=float, help="relative depth noise std-dev")
        sp.add_argument("--dropout", type=float, help="fraction of depth pixels invalidated")

    sp = sub.add_parser("eval", help="coverage / noise ratio / F-score of a cloud")
    sp.add_argument("pred", help="predicted PLY")
    sp.add_argument("--gt", help="ground-truth PLY")
    sp.add_argument("--scene", help="sample ground truth from this scene instead")
    sp.add_argument("--density", type=float, default=GT_DENSITY)
    sp.add_argument("--tau", type=float, default=DEFAULT_TAU)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", help="write the report as JSON")

    sp = sub.add_parser("calibrate", help="fit scale/bias between two depth maps")
    sp.add_argument("d_m", help="relative depth (NAVD)")
    sp.add_argument("d_v", help="absolute depth (NAVD)")
    sp.add_argument("--mask", help="PNG mask, nonzero = use pixel")
    sp.add_argument("--out", help="write params JSON")
    sp.add_argument("--apply-out", help="write the calibrated depth (NAVD)")

    sp = sub.add_parser("render", help="render a trajectory")
    sp.add_argument("scene_file", help="Gaussian scene JSON, or synthetic scene JSON/name")
    sp.add_argument("trajectory", help="trajectory JSON")
    sp.add_argument("--mode", choices=("gaussian", "synthetic"), default="gaussian")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--noise-sigma", type=float)
    sp.add_argument("--dropout", type=float)

    sp = sub.add_parser("scene-gen", help="sample a ground-truth cloud from a scene")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--density", type=float, default=GT_DENSITY)
    sp.add_argument("--seed", type=int)
    return p


COMMANDS = {"plan": cmd_plan, "baseline-plan": cmd_baseline_plan, "eval": cmd_eval,
            "calibrate": cmd_calibrate, "render": cmd_render, "scene-gen": cmd_scene_gen}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"nbvkit {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DomainError, OSError, ValueError, KeyError, TypeError) as e:
        print(f"nbvkit {args.command}: error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
