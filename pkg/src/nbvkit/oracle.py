"""Analytic scene oracle standing in for the video synthesizer and the
geometry annotator.

Scenes are unions of spheres, axis-aligned boxes and planes. Planes are
clipped to the scene ``bounds`` box so that they have finite area for
ground-truth sampling; ray hits outside the bounds are ignored.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from nbvkit.camera import WORLD_UP, CameraPose, Intrinsics, Ray, axis_angle, grid_ray_directions, look_at
from nbvkit.errors import DomainError
from nbvkit.pointcloud import DepthMap, PointCloud

EPS = 1e-9
SCENE_DIR = Path(__file__).parent / "scenes"
BUILTIN_SCENES = ("room", "pillars", "corridor")


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float
    color: tuple = (0.8, 0.8, 0.8)

    def __post_init__(self):
        if not self.radius > 0:
            raise DomainError("sphere radius must be positive")


@dataclass(frozen=True)
class Box:
    min: tuple
    max: tuple
    color: tuple = (0.8, 0.8, 0.8)

    def __post_init__(self):
        if not all(a < b for a, b in zip(self.min, self.max)):
            raise DomainError("box min must be < max componentwise")


@dataclass(frozen=True)
class Plane:
    """Plane through ``point``; ``normal`` points to the free side."""

    point: tuple
    normal: tuple
    color: tuple = (0.8, 0.8, 0.8)

    def __post_init__(self):
        if abs(np.linalg.norm(self.normal) - 1.0) > 1e-9:
            raise DomainError("plane normal must be unit length")


@dataclass(frozen=True)
class SyntheticScene:
    primitives: tuple
    background: tuple = (0.0, 0.0, 0.0)
    bounds: tuple = ((-10.0, -10.0, -10.0), (10.0, 10.0, 10.0))
    scene_center: tuple = (0.0, 0.0, 0.0)
    # reference camera: position and look-at target
    ref_center: tuple = (0.0, -1.0, 0.5)
    ref_target: tuple | None = None
    # extra reference views: yaw offsets (degrees) about world up at ref_center
    ref_yaws: tuple = ()

    def reference_pose(self) -> CameraPose:
        target = self.scene_center if self.ref_target is None else self.ref_target
        return look_at(self.ref_center, target)

    def reference_poses(self) -> list[CameraPose]:
        """Main reference pose followed by the yawed companion views."""
        base = self.reference_pose()
        out = [base]
        for yaw in self.ref_yaws:
            out.append(CameraPose(axis_angle(WORLD_UP, math.radians(yaw)) @ base.rotation, base.center))
        return out

    def to_dict(self) -> dict:
        prims = []
        for p in self.primitives:
            if isinstance(p, Sphere):
                prims.append({"type": "sphere", "center": list(p.center), "radius": p.radius, "color": list(p.color)})
            elif isinstance(p, Box):
                prims.append({"type": "box", "min": list(p.min), "max": list(p.max), "color": list(p.color)})
            else:
                prims.append({"type": "plane", "point": list(p.point), "normal": list(p.normal), "color": list(p.color)})
        d = {
            "primitives": prims,
            "background": list(self.background),
            "bounds": {"min": list(self.bounds[0]), "max": list(self.bounds[1])},
            "scene_center": list(self.scene_center),
            "reference_camera": {"center": list(self.ref_center)},
        }
        if self.ref_target is not None:
            d["reference_camera"]["target"] = list(self.ref_target)
        if self.ref_yaws:
            d["reference_camera"]["yaw_offsets"] = list(self.ref_yaws)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticScene":
        prims = []
        for p in d["primitives"]:
            color = tuple(p.get("color", (0.8, 0.8, 0.8)))
            kind = p["type"]
            if kind == "sphere":
                prims.append(Sphere(tuple(p["center"]), float(p["radius"]), color))
            elif kind == "box":
                prims.append(Box(tuple(p["min"]), tuple(p["max"]), color))
            elif kind == "plane":
                prims.append(Plane(tuple(p["point"]), tuple(p["normal"]), color))
            else:
                raise DomainError(f"unknown primitive type {kind!r}")
        kw = {}
        if "bounds" in d:
            kw["bounds"] = (tuple(d["bounds"]["min"]), tuple(d["bounds"]["max"]))
        if "scene_center" in d:
            kw["scene_center"] = tuple(d["scene_center"])
        if "reference_camera" in d:
            kw["ref_center"] = tuple(d["reference_camera"]["center"])
            if "target" in d["reference_camera"]:
                kw["ref_target"] = tuple(d["reference_camera"]["target"])
            kw["ref_yaws"] = tuple(float(y) for y in d["reference_camera"].get("yaw_offsets", ()))
        return cls(tuple(prims), tuple(d.get("background", (0.0, 0.0, 0.0))), **kw)


def load_scene(path_or_name) -> SyntheticScene:
    """Load a scene JSON file, or one of the bundled scenes by name."""
    p = Path(path_or_name)
    if not p.exists() and str(path_or_name) in BUILTIN_SCENES:
        p = SCENE_DIR / f"{path_or_name}.json"
    if not p.exists():
        raise FileNotFoundError(f"scene not found: {path_or_name}")
    return SyntheticScene.from_dict(json.loads(p.read_text()))


def save_scene(path, scene: SyntheticScene) -> None:
    Path(path).write_text(json.dumps(scene.to_dict(), indent=2))


@dataclass(frozen=True)
class NoiseModel:
    """Emulated synthesis/annotation error.

    ``depth_sigma`` is the relative std-dev of multiplicative depth noise and
    ``dropout_ratio`` the fraction of pixels invalidated.

    A clip whose camera path comes closer than ``collision_clearance`` to
    any surface (or enters a solid) is a failed synthesis as a whole: every
    frame is rendered from its commanded pose perturbed by one random rigid
    drift (``drift_translation`` metres and ``drift_rotation_deg`` degrees
    std-dev per axis) but annotated with the commanded pose, so the clip
    fuses as a misregistered fragment.
    """

    depth_sigma: float = 0.0
    dropout_ratio: float = 0.0
    seed: int = 0
    collision_clearance: float = 0.0
    drift_translation: float = 0.0
    drift_rotation_deg: float = 0.0

    @property
    def degrades(self) -> bool:
        return self.collision_clearance > 0 and (self.drift_translation > 0 or self.drift_rotation_deg > 0)

    def __post_init__(self):
        if self.depth_sigma < 0 or self.drift_translation < 0 or self.drift_rotation_deg < 0:
            raise DomainError("noise sigma must be non-negative")
        if not 0.0 <= self.dropout_ratio <= 1.0:
            raise DomainError("dropout_ratio must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class AnnotatedView:
    image: np.ndarray
    depth: DepthMap
    pose: CameraPose
    intrinsics: Intrinsics
    degraded: bool = False


# --- ray casting -------------------------------------------------------------

def _hit_spheres(prim: Sphere, o, d):
    oc = o - np.asarray(prim.center)
    b = np.einsum("ij,ij->i", oc, d)
    cc = np.einsum("ij,ij->i", oc, oc) - prim.radius ** 2
    disc = b * b - cc
    t = np.full(len(o), np.inf)
    ok = disc >= 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t1, t2 = -b - sq, -b + sq
    t = np.where(ok & (t2 > EPS), t2, t)
    t = np.where(ok & (t1 > EPS), t1, t)
    return t


def _hit_boxes(prim: Box, o, d):
    lo, hi = np.asarray(prim.min, dtype=float), np.asarray(prim.max, dtype=float)
    safe = np.where(d == 0, 1e-300, d)
    inv = 1.0 / safe
    ta, tb = (lo - o) * inv, (hi - o) * inv
    t_near = np.minimum(ta, tb).max(axis=1)
    t_far = np.maximum(ta, tb).min(axis=1)
    t = np.full(len(o), np.inf)
    ok = t_near <= t_far
    t = np.where(ok & (t_far > EPS), t_far, t)
    t = np.where(ok & (t_near > EPS), t_near, t)
    return t


def _hit_planes(prim: Plane, o, d, bounds):
    n = np.asarray(prim.normal, dtype=float)
    denom = d @ n
    num = (np.asarray(prim.point) - o) @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(np.abs(denom) > 1e-12, num / denom, np.inf)
    t = np.where(t > EPS, t, np.inf)
    p = o + np.where(np.isfinite(t), t, 0.0)[:, None] * d
    lo, hi = np.asarray(bounds[0]) - 1e-9, np.asarray(bounds[1]) + 1e-9
    inside = np.all((p >= lo) & (p <= hi), axis=1)
    return np.where(inside, t, np.inf)


def raycast_batch(scene: SyntheticScene, origins: np.ndarray, dirs: np.ndarray):
    """Nearest positive hit per ray: (t, colors, primitive index or -1)."""
    o = np.asarray(origins, dtype=float).reshape(-1, 3)
    d = np.asarray(dirs, dtype=float).reshape(-1, 3)
    if len(o) != len(d):
        o = np.broadcast_to(o, d.shape)
    best = np.full(len(d), np.inf)
    which = np.full(len(d), -1)
    for i, prim in enumerate(scene.primitives):
        if isinstance(prim, Sphere):
            t = _hit_spheres(prim, o, d)
        elif isinstance(prim, Box):
            t = _hit_boxes(prim, o, d)
        else:
            t = _hit_planes(prim, o, d, scene.bounds)
        closer = t < best
        best = np.where(closer, t, best)
        which = np.where(closer, i, which)
    palette = np.array([p.color for p in scene.primitives] + [scene.background], dtype=float)
    colors = palette[which]  # index -1 picks the background
    return best, colors, which


def raycast(scene: SyntheticScene, ray: Ray):
    """``(depth, color)`` of the nearest hit, or None."""
    t, c, w = raycast_batch(scene, ray.origin[None], ray.direction[None])
    if w[0] < 0:
        return None
    return float(t[0]), c[0]


def surface_clearance(scene: SyntheticScene, p) -> float:
    """Signed distance from ``p`` to the nearest surface; negative inside a
    solid or behind a plane."""
    p = np.asarray(p, dtype=float)
    best = np.inf
    for prim in scene.primitives:
        if isinstance(prim, Sphere):
            s = np.linalg.norm(p - np.asarray(prim.center)) - prim.radius
        elif isinstance(prim, Box):
            lo, hi = np.asarray(prim.min), np.asarray(prim.max)
            c, h = (lo + hi) / 2, (hi - lo) / 2
            q = np.abs(p - c) - h
            s = np.linalg.norm(np.maximum(q, 0.0)) + min(q.max(), 0.0)
        else:
            s = float((p - np.asarray(prim.point)) @ np.asarray(prim.normal))
        best = min(best, float(s))
    return best


def render_view(scene: SyntheticScene, pose: CameraPose, intr: Intrinsics):
    """Noise-free (image, depth) of ``scene`` seen from ``pose``."""
    dirs = grid_ray_directions(pose, intr).reshape(-1, 3)
    t, colors, which = raycast_batch(scene, pose.center[None], dirs)
    H, W = intr.height, intr.width
    hit = (which >= 0).reshape(H, W)
    depth = np.where(hit, t.reshape(H, W), 0.0)
    return colors.reshape(H, W, 3), DepthMap(depth, hit)


def synthesize_views(scene: SyntheticScene, traj: Sequence[CameraPose], intr: Intrinsics,
                     noise: NoiseModel | None = None) -> list[AnnotatedView]:
    rng = np.random.default_rng(noise.seed) if noise is not None else None
    views = []
    drift = None
    if noise is not None and noise.degrades and any(
            surface_clearance(scene, p.center) < noise.collision_clearance for p in traj):
        rot = rng.standard_normal(3) * math.radians(noise.drift_rotation_deg)
        angle = float(np.linalg.norm(rot))
        drift = (axis_angle(rot, angle) if angle > 0 else np.eye(3),
                 noise.drift_translation * rng.standard_normal(3))
    degraded = drift is not None
    for pose in traj:
        render_pose = pose
        if degraded:
            render_pose = CameraPose(drift[0] @ pose.rotation, pose.center + drift[1])
        image, depth = render_view(scene, render_pose, intr)
        if noise is not None:
            vals = depth.values
            if noise.depth_sigma > 0:
                vals = vals * (1.0 + noise.depth_sigma * rng.standard_normal(vals.shape))
            valid = depth.valid & (vals > 0)
            if noise.dropout_ratio > 0:
                valid &= rng.random(vals.shape) >= noise.dropout_ratio
            depth = DepthMap(np.where(valid, vals, 0.0), valid)
        views.append(AnnotatedView(image, depth, pose, intr, degraded))
    return views


# --- ground-truth sampling -----------------------------------------------------

def _jittered_grid(rng, n_u: int, n_v: int) -> tuple[np.ndarray, np.ndarray]:
    iu, iv = np.meshgrid(np.arange(n_u), np.arange(n_v), indexing="ij")
    u = (iu.ravel() + rng.random(iu.size)) / n_u
    v = (iv.ravel() + rng.random(iv.size)) / n_v
    return u, v


def _sample_sphere(s: Sphere, density: float, rng) -> np.ndarray:
    n = max(1, int(round(4 * math.pi * s.radius ** 2 * density)))
    i = np.arange(n)
    z = -1.0 + 2.0 * (i + rng.random(n)) / n
    golden = (math.sqrt(5.0) - 1.0) / 2.0
    phi = 2 * math.pi * np.mod(i * golden + rng.random(n) / n, 1.0)
    rho = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    unit = np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)
    unit /= np.linalg.norm(unit, axis=1, keepdims=True)
    return np.asarray(s.center) + s.radius * unit


def _sample_rect(origin, e1, e2, a: float, b: float, density: float, rng) -> np.ndarray:
    n = a * b * density
    n_u = max(1, int(round(math.sqrt(n * a / b))))
    n_v = max(1, int(round(math.sqrt(n * b / a))))
    u, v = _jittered_grid(rng, n_u, n_v)
    return origin + (u * a)[:, None] * e1 + (v * b)[:, None] * e2


def _sample_box(bx: Box, density: float, rng) -> np.ndarray:
    lo, hi = np.asarray(bx.min, dtype=float), np.asarray(bx.max, dtype=float)
    ext = hi - lo
    eye = np.eye(3)
    out = []
    for axis in range(3):
        a1, a2 = [k for k in range(3) if k != axis]
        for side in (lo[axis], hi[axis]):
            origin = lo.copy()
            origin[axis] = side
            out.append(_sample_rect(origin, eye[a1], eye[a2], ext[a1], ext[a2], density, rng))
    return np.concatenate(out)


def _plane_basis(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    helper = np.eye(3)[int(np.argmin(np.abs(n)))]
    e1 = np.cross(n, helper)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(n, e1)


def _sample_plane(pl: Plane, bounds, density: float, rng) -> np.ndarray:
    n = np.asarray(pl.normal, dtype=float)
    p0 = np.asarray(pl.point, dtype=float)
    e1, e2 = _plane_basis(n)
    lo, hi = np.asarray(bounds[0], dtype=float), np.asarray(bounds[1], dtype=float)
    corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    cu, cv = (corners - p0) @ e1, (corners - p0) @ e2
    origin = p0 + cu.min() * e1 + cv.min() * e2
    pts = _sample_rect(origin, e1, e2, cu.max() - cu.min(), cv.max() - cv.min(), density, rng)
    inside = np.all((pts >= lo - 1e-9) & (pts <= hi + 1e-9), axis=1)
    return pts[inside]


def gt_cloud(scene: SyntheticScene, samples_per_unit_area: float, seed: int = 0) -> PointCloud:
    """Stratified surface samples of every primitive, colored per primitive."""
    if not samples_per_unit_area > 0:
        raise DomainError("sampling density must be positive")
    rng = np.random.default_rng(seed)
    pts, cols = [], []
    for prim in scene.primitives:
        if isinstance(prim, Sphere):
            p = _sample_sphere(prim, samples_per_unit_area, rng)
        elif isinstance(prim, Box):
            p = _sample_box(prim, samples_per_unit_area, rng)
        else:
            p = _sample_plane(prim, scene.bounds, samples_per_unit_area, rng)
        pts.append(p)
        cols.append(np.broadcast_to(np.asarray(prim.color, dtype=float), p.shape))
    if not pts:
        return PointCloud.empty()
    return PointCloud(np.concatenate(pts), np.concatenate(cols))


@dataclass
class SceneOracle:
    """Bundles a scene with a camera model and noise so the planner can ask
    for annotated views of a trajectory."""

    scene: SyntheticScene
    intrinsics: Intrinsics
    noise: NoiseModel | None = None
    calls: int = field(default=0, init=False)

    def synthesize(self, traj: Sequence[CameraPose]) -> list[AnnotatedView]:
        noise = self.noise
        if noise is not None:
            # fresh, reproducible noise stream per call
            noise = replace(noise, seed=int(np.random.SeedSequence([noise.seed, self.calls]).generate_state(1)[0]))
        self.calls += 1
        return synthesize_views(self.scene, traj, self.intrinsics, noise)

    def reference_views(self) -> list[AnnotatedView]:
        """Noise-free views from the reference position; the first one is
        the reference pose the planner starts from."""
        out = []
        for pose in self.scene.reference_poses():
            image, depth = render_view(self.scene, pose, self.intrinsics)
            out.append(AnnotatedView(image, depth, pose, self.intrinsics))
        return out

    def reference_view(self) -> AnnotatedView:
        return self.reference_views()[0]
