"""Collision-aware next-best-view planning.

The loop alternates candidate sampling, collision filtering, visibility
scoring, spherical interpolation toward the chosen view, hinge-cost
trajectory repair, and fusion of the synthesized views into the growing
point cloud.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from nbvkit.camera import (
    CameraPose,
    Intrinsics,
    SearchSpace,
    Trajectory,
    interpolate_trajectory,
    look_at_robust,
    sample_candidates,
    spherical_coords,
)
from nbvkit.errors import DomainError
from nbvkit.pointcloud import (
    PointCloud,
    SpatialIndex,
    VisibilityMask,
    back_project,
    build_index,
    merge,
    render_mask,
)

log = logging.getLogger(__name__)

HINGE_TOL = 1e-9


class NoViableCandidate(DomainError):
    """Every candidate pose was rejected."""


@dataclass
class CollisionDetector:
    index: SpatialIndex
    r_safe: float

    def __post_init__(self):
        if not self.r_safe > 0:
            raise DomainError("r_safe must be positive")

    @classmethod
    def from_cloud(cls, cloud: PointCloud, r_safe: float) -> "CollisionDetector":
        return cls(build_index(cloud), r_safe)

    def distances(self, centers: np.ndarray) -> np.ndarray:
        return self.index.min_distances(centers)

    def collides(self, pose: CameraPose) -> bool:
        return bool(self.distances(pose.center[None])[0] < self.r_safe)

    def collides_any(self, traj) -> bool:
        centers = np.stack([p.center for p in traj])
        return bool(np.any(self.distances(centers) < self.r_safe))


@dataclass(frozen=True)
class PlannerConfig:
    n_steps: int = 3
    k_candidates: int = 3
    r_safe: float = 0.1
    lam: float = 1.0
    frames_per_segment: int = 25
    overlap_min: float = 0.3
    opt_step: float | None = None  # default 0.05 * r_safe
    opt_max_iters: int = 500
    voxel_size: float = 0.01
    seed: int = 0
    point_radius_px: float = 1.0
    search_space: SearchSpace | None = None  # default: quarter sphere around the reference azimuth
    collision_aware: bool = True

    def __post_init__(self):
        if self.n_steps < 0 or self.k_candidates < 1:
            raise DomainError("n_steps must be >= 0 and k_candidates >= 1")
        if self.lam < 0 or self.opt_max_iters < 1:
            raise DomainError("lambda must be >= 0 and opt_max_iters >= 1")
        if self.frames_per_segment < 2:
            raise DomainError("frames_per_segment must be >= 2")
        if not 0.0 <= self.overlap_min <= 1.0:
            raise DomainError("overlap_min must lie in [0, 1]")

    @property
    def step_size(self) -> float:
        return 0.05 * self.r_safe if self.opt_step is None else self.opt_step

    def to_dict(self) -> dict:
        d = asdict(self)
        d["search_space"] = None if self.search_space is None else asdict(self.search_space)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PlannerConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        if d.get("search_space") is not None:
            d["search_space"] = SearchSpace(**d["search_space"])
        return cls(**d)


@dataclass
class StepReport:
    step: int
    candidate_scores: list
    chosen_index: int | None
    chosen_pose: CameraPose | None
    optimized: bool = False
    hinge_pre: float = 0.0
    hinge_post: float = 0.0
    fill_ratio: float = 0.0
    expanded_search: bool = False
    start_collides: bool = False
    failed: bool = False
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "candidate_scores": [None if not math.isfinite(s) else s for s in self.candidate_scores],
            "chosen_index": self.chosen_index,
            "chosen_pose": None if self.chosen_pose is None else self.chosen_pose.to_dict(),
            "optimized": self.optimized,
            "hinge_pre": self.hinge_pre,
            "hinge_post": self.hinge_post,
            "fill_ratio": self.fill_ratio,
            "expanded_search": self.expanded_search,
            "start_collides": self.start_collides,
            "failed": self.failed,
            "message": self.message,
        }


@dataclass
class PlanResult:
    initial_cloud: PointCloud
    cloud: PointCloud
    segments: list = field(default_factory=list)
    views: list = field(default_factory=list)  # one list of AnnotatedView per segment
    reports: list = field(default_factory=list)
    planning_clouds: list = field(default_factory=list)  # cloud active when each segment was planned
    failed: bool = False
    failure_reason: str = ""


# --- scoring and selection ----------------------------------------------------

def check_pose(det: CollisionDetector, pose: CameraPose) -> bool:
    """True when ``pose`` lies strictly within ``r_safe`` of the cloud."""
    return det.collides(pose)


def score_view(mask: VisibilityMask, overlap_min: float) -> float:
    """Number of empty pixels, or -inf when too little of the view is covered
    by the current cloud to anchor new content on."""
    if mask.fill_ratio < overlap_min:
        return -math.inf
    return float(mask.empty_count)


def select_nbv(candidates, scores) -> tuple[int, CameraPose]:
    if len(candidates) != len(scores) or not candidates:
        raise DomainError("candidates and scores must be non-empty and equal length")
    best, best_i = -math.inf, None
    for i, s in enumerate(scores):
        if s > best:
            best, best_i = s, i
    if best_i is None:
        raise NoViableCandidate("no viable candidate")
    return best_i, candidates[best_i]


# --- trajectory costs and repair ---------------------------------------------

def _centers(traj) -> np.ndarray:
    return np.stack([p.center for p in traj])


def hinge_collision_cost(traj, index: SpatialIndex, r_safe: float) -> float:
    d = index.min_distances(_centers(traj))
    return float(np.maximum(0.0, r_safe - d).sum())


def smoothness_cost(traj) -> float:
    if len(traj) < 2:
        raise DomainError("smoothness needs at least two poses")
    c = _centers(traj)
    return float((np.diff(c, axis=0) ** 2).sum())


def _hinge_terms(x: np.ndarray, index: SpatialIndex, r_safe: float, scene_center: np.ndarray):
    """Per-point hinge cost and its gradient w.r.t. the points."""
    d, nn = index.nearest(x)
    active = d < r_safe
    grad = np.zeros_like(x)
    if np.any(active):
        away = x[active] - index.points[nn[active]]
        dist = d[active][:, None]
        # coincident with a cloud point: fall back to moving away from the scene center
        fallback = x[active] - scene_center
        fallback /= np.maximum(np.linalg.norm(fallback, axis=1, keepdims=True), 1e-300)
        unit = np.where(dist > 0, away / np.where(dist > 0, dist, 1.0), fallback)
        grad[active] = -unit
    cost = np.maximum(0.0, r_safe - d)
    return float(cost.sum()), grad


def _smooth_grad(x: np.ndarray) -> np.ndarray:
    g = np.zeros_like(x)
    diff = np.diff(x, axis=0)
    g[:-1] -= 2 * diff
    g[1:] += 2 * diff
    return g


def optimize_trajectory(traj: Trajectory, det: CollisionDetector, scene_center, lam: float = 1.0,
                        opt_step: float | None = None, opt_max_iters: int = 500,
                        history: list | None = None) -> Trajectory:
    """Push interior trajectory points out of the safety radius.

    Gradient descent on ``hinge + lam * smoothness`` over interior camera
    centers, endpoints fixed. A step is accepted only if it does not raise
    the hinge cost; otherwise a hinge-only step is tried, then the step is
    halved. Interior orientations are re-derived by looking at
    ``scene_center``. If ``history`` is given, the hinge cost after every
    iteration is appended to it.
    """
    o = np.asarray(scene_center, dtype=float)
    r = det.r_safe
    step = 0.05 * r if opt_step is None else opt_step
    if det.collides(traj[0]) or det.collides(traj[-1]):
        raise DomainError("trajectory endpoints are in collision")
    x = _centers(traj).copy()
    hinge, g_h = _hinge_terms(x, det.index, r, o)
    if history is not None:
        history.append(hinge)
    if hinge <= HINGE_TOL:
        return traj
    # keep the smoothness update stable regardless of lambda
    smooth_step = min(step, 0.2 / lam) if lam > 0 else 0.0

    for _ in range(opt_max_iters):
        g_s = _smooth_grad(x)
        accepted = False
        eta, eta_s = step, smooth_step
        for _attempt in range(30):
            for use_smooth in (True, False):
                trial = x.copy()
                delta = eta * g_h
                if use_smooth and lam > 0:
                    delta = delta + eta_s * lam * g_s
                trial[1:-1] -= delta[1:-1]
                h_new, g_new = _hinge_terms(trial, det.index, r, o)
                if h_new <= hinge:
                    x, hinge, g_h = trial, h_new, g_new
                    accepted = True
                    break
            if accepted:
                break
            eta *= 0.5
            eta_s *= 0.5
        if history is not None:
            history.append(hinge)
        if not accepted or hinge <= HINGE_TOL:
            break

    poses = [traj[0]]
    for c in x[1:-1]:
        poses.append(look_at_robust(c, o))
    poses.append(traj[-1])
    return Trajectory(poses)


# --- the planning loop -----------------------------------------------------------

def _step_seed(seed: int, step: int, attempt: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, step, attempt])


def default_search_space(scene_center, ref: CameraPose) -> SearchSpace:
    _, az, _ = spherical_coords(ref.center, scene_center)
    return SearchSpace.quarter_sphere(az)


def _evaluate_candidates(cands, cloud, det, intr, config):
    scores, fills = [], []
    for c in cands:
        if config.collision_aware and det.collides(c):
            scores.append(-math.inf)
            fills.append(0.0)
            continue
        mask, _ = render_mask(cloud, c, intr, config.point_radius_px)
        scores.append(score_view(mask, config.overlap_min))
        fills.append(mask.fill_ratio)
    return scores, fills


def plan(oracle, init_view, config: PlannerConfig, scene_center=None) -> PlanResult:
    """Run the collision-aware planning loop for ``config.n_steps`` steps.

    ``oracle`` must provide ``synthesize(poses) -> list[AnnotatedView]``;
    ``init_view`` is the reference ``AnnotatedView`` or a sequence of them
    whose first element fixes the starting pose; all of them seed the
    reference cloud. With
    ``config.collision_aware`` false the loop degrades to the utility-only
    baseline: colliding candidates are scored like any other and
    interpolated segments are never repaired.
    """
    init_views = list(init_view) if isinstance(init_view, (list, tuple)) else [init_view]
    init_view = init_views[0]
    intr: Intrinsics = init_view.intrinsics
    p_ref = PointCloud.empty()
    for v in init_views:
        p_ref = merge(p_ref, back_project(v.depth, v.pose, v.intrinsics, v.image), config.voxel_size)
    if len(p_ref) == 0:
        raise DomainError("reference view produced an empty point cloud")
    o = np.asarray(scene_center if scene_center is not None else p_ref.positions.mean(axis=0), dtype=float)
    space = config.search_space or default_search_space(o, init_view.pose)

    cloud = p_ref
    c_curr = init_view.pose
    det = CollisionDetector.from_cloud(cloud, config.r_safe)
    result = PlanResult(initial_cloud=p_ref, cloud=p_ref)

    for step in range(config.n_steps):
        cands = sample_candidates(o, c_curr, config.k_candidates, space, _step_seed(config.seed, step, 0))
        scores, fills = _evaluate_candidates(cands, cloud, det, intr, config)
        expanded = False
        if all(s == -math.inf for s in scores):
            expanded = True
            cands = sample_candidates(o, c_curr, config.k_candidates, space.expanded(),
                                      _step_seed(config.seed, step, 1))
            scores, fills = _evaluate_candidates(cands, cloud, det, intr, config)
        try:
            idx, nbv = select_nbv(cands, scores)
        except NoViableCandidate:
            result.reports.append(StepReport(step, scores, None, None, expanded_search=expanded,
                                             failed=True, message="no viable candidate"))
            result.failed = True
            result.failure_reason = f"step {step}: no viable candidate after search expansion"
            log.info("step %d: no viable candidate", step)
            break

        report = StepReport(step, scores, idx, nbv, fill_ratio=fills[idx], expanded_search=expanded)
        traj = interpolate_trajectory(c_curr, nbv, config.frames_per_segment)
        if config.collision_aware:
            report.hinge_pre = hinge_collision_cost(traj, det.index, config.r_safe)
            report.hinge_post = report.hinge_pre
            if det.collides_any(traj):
                if det.collides(c_curr):
                    # newly observed geometry closed in on the segment start
                    report.start_collides = True
                    report.failed = True
                    report.message = "segment start in collision with the updated cloud"
                    result.reports.append(report)
                    result.failed = True
                    result.failure_reason = f"step {step}: {report.message}"
                    break
                traj = optimize_trajectory(traj, det, o, config.lam, config.step_size, config.opt_max_iters)
                report.optimized = True
                report.hinge_post = hinge_collision_cost(traj, det.index, config.r_safe)

        views = oracle.synthesize(traj.poses)
        result.planning_clouds.append(cloud)
        for v in views:
            cloud = merge(cloud, back_project(v.depth, v.pose, intr, v.image), config.voxel_size)
        det = CollisionDetector.from_cloud(cloud, config.r_safe)
        c_curr = nbv
        result.segments.append(traj)
        result.views.append(views)
        result.reports.append(report)
        log.info("step %d: chose %d/%d score=%.0f optimized=%s points=%d", step, idx, len(cands),
                 scores[idx], report.optimized, len(cloud))

    result.cloud = cloud
    return result
