"""Reconstruction metrics (coverage, noise ratio, F-score at a distance
threshold) and first-frame-aligned camera pose errors."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from nbvkit.camera import geodesic_angle
from nbvkit.errors import DegenerateInputError, DomainError
from nbvkit.pointcloud import PointCloud, SpatialIndex

DEFAULT_TAU = 0.02


@dataclass
class ReconReport:
    coverage: float
    noise_ratio: float
    fscore: float
    tau: float = DEFAULT_TAU
    runtime: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def row(self, name: str = "") -> str:
        return (f"| {name} | {self.coverage:.2f} | {self.noise_ratio:.3f} | {self.fscore:.3f} "
                f"| {self.runtime:.2f} |")


@dataclass
class PoseErrorReport:
    r_err: float
    t_err: float


def _check(cloud: PointCloud, what: str, tau: float) -> None:
    if len(cloud) == 0:
        raise DomainError(f"{what} cloud is empty")
    if not tau > 0:
        raise DomainError("tau must be positive")


def _nn_dist(src: PointCloud, dst: PointCloud) -> np.ndarray:
    """Distance from every point of ``src`` to its nearest point in ``dst``."""
    return SpatialIndex(dst.positions).min_distances(src.positions)


def coverage(pred: PointCloud, gt: PointCloud, tau: float = DEFAULT_TAU) -> float:
    """Percentage of ground-truth points with a prediction within ``tau``."""
    _check(gt, "ground-truth", tau)
    matched = int(np.count_nonzero(_nn_dist(gt, pred) <= tau))
    return 100.0 * matched / len(gt)


def noise_ratio(pred: PointCloud, gt: PointCloud, tau: float = DEFAULT_TAU) -> float:
    """Fraction of predicted points with no ground truth within ``tau``."""
    _check(pred, "predicted", tau)
    unmatched = int(np.count_nonzero(_nn_dist(pred, gt) > tau))
    return unmatched / len(pred)


def fscore_from(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def fscore(pred: PointCloud, gt: PointCloud, tau: float = DEFAULT_TAU) -> float:
    _check(pred, "predicted", tau)
    _check(gt, "ground-truth", tau)
    return fscore_from(1.0 - noise_ratio(pred, gt, tau), coverage(pred, gt, tau) / 100.0)


def recon_report(pred: PointCloud, gt: PointCloud, tau: float = DEFAULT_TAU, runtime: float = 0.0) -> ReconReport:
    cov = coverage(pred, gt, tau)
    nr = noise_ratio(pred, gt, tau)
    return ReconReport(cov, nr, fscore_from(1.0 - nr, cov / 100.0), tau, runtime)


def _relative(traj):
    R0, c0 = traj[0].rotation, traj[0].center
    rots = [R0.T @ p.rotation for p in traj]
    trans = np.stack([R0.T @ (p.center - c0) for p in traj])
    return rots, trans


def pose_errors(estimated, reference, scale: str = "mean") -> PoseErrorReport:
    """Mean rotation (radians) and scale-normalized translation error.

    Both trajectories are expressed relative to their first frame; each
    trajectory's relative translations are divided by their own mean (or
    median) norm over frames 1..n-1. Errors are averaged over those frames.
    """
    if len(estimated) != len(reference):
        raise DegenerateInputError("trajectories differ in length")
    if len(estimated) < 2:
        raise DegenerateInputError("need at least two frames")
    if scale not in ("mean", "median"):
        raise DomainError(f"unknown scale normalization {scale!r}")
    reduce = np.mean if scale == "mean" else np.median
    r_est, t_est = _relative(estimated)
    r_ref, t_ref = _relative(reference)
    s_est = float(reduce(np.linalg.norm(t_est[1:], axis=1)))
    s_ref = float(reduce(np.linalg.norm(t_ref[1:], axis=1)))
    if s_est == 0 or s_ref == 0:
        raise DegenerateInputError("zero translation scale")
    r_err = float(np.mean([geodesic_angle(a, b) for a, b in zip(r_est[1:], r_ref[1:])]))
    t_err = float(np.mean(np.linalg.norm(t_est[1:] / s_est - t_ref[1:] / s_ref, axis=1)))
    return PoseErrorReport(min(r_err, math.pi), t_err)
