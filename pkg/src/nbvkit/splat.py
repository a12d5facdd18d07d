"""Forward renderer for 3-D Gaussians, opacity-compensated random dropping,
and L1 photometric / depth losses.

Each Gaussian is evaluated at the point where the ray passes closest to
its center; Gaussians are composited front to back in order of that ray
parameter.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from nbvkit.camera import CameraPose, Intrinsics, Ray, check_rotation, grid_ray_directions
from nbvkit.errors import DomainError, NumericalDomainError
from nbvkit.pointcloud import DepthMap

ALPHA_MAX = 0.999
CULL_MAHALANOBIS_SQ = 9.0  # beyond 3 sigma
MAX_CONDITION = 1e12


@dataclass(frozen=True, eq=False)
class Gaussian3D:
    """Anisotropic Gaussian with covariance ``R diag(scale)^2 R^T``.

    ``opacity`` may exceed 1 after drop compensation; it is clamped to
    [0, 1] when evaluated.
    """

    mu: np.ndarray
    color: np.ndarray
    opacity: float
    scale: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float).reshape(3)
        color = np.array(self.color, dtype=float).reshape(3)
        scale = np.array(self.scale, dtype=float).reshape(3)
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(color))):
            raise DomainError("Gaussian center and color must be finite")
        if not (math.isfinite(self.opacity) and self.opacity >= 0):
            raise DomainError("opacity must be finite and non-negative")
        if not np.all(scale > 0):
            raise DomainError("Gaussian scales must be positive")
        check_rotation(R)
        for name, val in (("mu", mu), ("color", color), ("scale", scale), ("rotation", R)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "opacity", float(self.opacity))

    @property
    def covariance(self) -> np.ndarray:
        M = self.rotation * self.scale  # R @ diag(scale)
        return M @ M.T

    @property
    def precision(self) -> np.ndarray:
        """Inverse covariance ``R diag(scale)^-2 R^T``."""
        cond = (self.scale.max() / self.scale.min()) ** 2
        if cond > MAX_CONDITION:
            raise NumericalDomainError(f"covariance condition number {cond:.3g} is too large")
        M = self.rotation / self.scale
        return M @ M.T

    def to_dict(self) -> dict:
        return {"mu": self.mu.tolist(), "color": self.color.tolist(), "opacity": self.opacity,
                "scale": self.scale.tolist(), "rotation": self.rotation.reshape(-1).tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Gaussian3D":
        try:
            return cls(d["mu"], d["color"], float(d["opacity"]), d["scale"],
                       np.reshape(d.get("rotation", np.eye(3).reshape(-1).tolist()), (3, 3)))
        except KeyError as e:
            raise DomainError(f"Gaussian entry missing key {e}") from None


@dataclass(frozen=True, eq=False)
class GaussianScene:
    gaussians: tuple = ()
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        gs = tuple(self.gaussians)
        for g in gs:
            if not isinstance(g, Gaussian3D):
                raise DomainError("scene entries must be Gaussian3D")
        bg = np.array(self.background, dtype=float).reshape(3)
        bg.setflags(write=False)
        object.__setattr__(self, "gaussians", gs)
        object.__setattr__(self, "background", bg)

    def __len__(self):
        return len(self.gaussians)

    def to_dict(self) -> dict:
        return {"background": self.background.tolist(), "gaussians": [g.to_dict() for g in self.gaussians]}

    @classmethod
    def from_dict(cls, d) -> "GaussianScene":
        # a bare list is accepted as the gaussian array with a black background
        if isinstance(d, list):
            return cls(tuple(Gaussian3D.from_dict(g) for g in d))
        return cls(tuple(Gaussian3D.from_dict(g) for g in d["gaussians"]), d.get("background", [0, 0, 0]))


def load_gaussians(path) -> GaussianScene:
    return GaussianScene.from_dict(json.loads(Path(path).read_text()))


def save_gaussians(path, scene: GaussianScene) -> None:
    Path(path).write_text(json.dumps(scene.to_dict(), indent=1))


def eval_alpha(g: Gaussian3D, p) -> float:
    """``min(opacity, 1) * exp(-0.5 * mahalanobis^2)``."""
    d = np.asarray(p, dtype=float).reshape(3) - g.mu
    m2 = float(d @ g.precision @ d)
    return min(g.opacity, 1.0) * math.exp(-0.5 * m2)


# --- compositing -------------------------------------------------------------

@dataclass(frozen=True)
class _Packed:
    mu: np.ndarray         # (N, 3)
    precision: np.ndarray  # (N, 3, 3)
    opacity: np.ndarray    # (N,) clamped to [0, 1]
    color: np.ndarray      # (N, 3)
    rank: np.ndarray       # (N,) position in a storage-order-free canonical order


def _pack(scene: GaussianScene) -> _Packed:
    gs = scene.gaussians
    if not gs:
        z = np.zeros((0, 3))
        return _Packed(z, np.zeros((0, 3, 3)), np.zeros(0), z, np.zeros(0, dtype=int))
    mu = np.stack([g.mu for g in gs])
    color = np.stack([g.color for g in gs])
    opacity = np.array([min(g.opacity, 1.0) for g in gs])
    scale = np.stack([g.scale for g in gs])
    rot = np.stack([g.rotation.reshape(-1) for g in gs])
    precision = np.stack([g.precision for g in gs])
    # canonical order: lexicographic over every parameter, so ties in depth
    # are broken the same way regardless of how the scene is stored
    keys = np.concatenate([mu, color, opacity[:, None], scale, rot], axis=1)
    order = np.lexsort(keys.T[::-1])
    rank = np.empty(len(gs), dtype=int)
    rank[order] = np.arange(len(gs))
    return _Packed(mu, precision, opacity, color, rank)


def _composite(pk: _Packed, origins: np.ndarray, dirs: np.ndarray):
    """Front-to-back compositing for a batch of rays.

    Returns the per-ray sorted ray parameters ``t``, compositing weights,
    final transmittance and the Gaussian index behind each sorted slot.
    Culled or behind-camera Gaussians get weight 0 and sort last.
    """
    R, N = len(dirs), len(pk.mu)
    if N == 0:
        empty = np.zeros((R, 0))
        return empty, empty, np.ones(R), np.zeros((R, 0), dtype=int)
    rel = pk.mu[None] - origins[:, None]                # (R, N, 3)
    t = np.einsum("rnk,rk->rn", rel, dirs)               # closest approach
    diff = origins[:, None] + t[..., None] * dirs[:, None] - pk.mu[None]
    m2 = np.einsum("rni,nij,rnj->rn", diff, pk.precision, diff)
    alpha = pk.opacity[None] * np.exp(-0.5 * m2)
    active = (t >= 0) & (m2 <= CULL_MAHALANOBIS_SQ)
    alpha = np.where(active, np.clip(alpha, 0.0, ALPHA_MAX), 0.0)

    t_key = np.where(active, t, np.inf)
    rank = np.broadcast_to(pk.rank, (R, N))
    order = np.lexsort((rank, t_key), axis=-1)
    a = np.take_along_axis(alpha, order, axis=1)
    ts = np.take_along_axis(t, order, axis=1)
    trans = np.cumprod(1.0 - a, axis=1)
    before = np.concatenate([np.ones((R, 1)), trans[:, :-1]], axis=1)
    weights = a * before
    final_t = trans[:, -1]
    return ts, weights, final_t, order


@dataclass(frozen=True)
class RayComposite:
    color: np.ndarray
    alpha: float
    depth: float  # nan when no weight was accumulated
    weights: np.ndarray  # per Gaussian, in storage order
    transmittance: float


def composite_ray(scene: GaussianScene, ray: Ray) -> RayComposite:
    pk = _pack(scene)
    ts, w, final_t, order = _composite(pk, ray.origin[None], ray.direction[None])
    ts, w, order, T = ts[0], w[0], order[0], float(final_t[0])
    color = (w[:, None] * pk.color[order]).sum(axis=0) + T * scene.background
    wsum = float(w.sum())
    depth = float((w * ts).sum() / wsum) if wsum > 0 else math.nan
    per_g = np.zeros(len(scene))
    per_g[order] = w
    return RayComposite(color, 1.0 - T, depth, per_g, T)


def render_ray(scene: GaussianScene, ray: Ray) -> tuple[np.ndarray, float, float]:
    """(color, accumulated alpha, expected depth) along ``ray``."""
    c = composite_ray(scene, ray)
    return c.color, c.alpha, c.depth


def render_image(scene: GaussianScene, pose: CameraPose, intr: Intrinsics, chunk: int = 4096):
    """(image HxWx3, alpha HxW, DepthMap) using the standard pixel rays."""
    H, W = intr.height, intr.width
    dirs = grid_ray_directions(pose, intr).reshape(-1, 3)
    pk = _pack(scene)
    n_pix = len(dirs)
    img = np.empty((n_pix, 3))
    acc = np.empty(n_pix)
    depth = np.zeros(n_pix)
    valid = np.zeros(n_pix, dtype=bool)
    for s in range(0, n_pix, chunk):
        d = dirs[s:s + chunk]
        o = np.broadcast_to(pose.center, d.shape)
        ts, w, T, order = _composite(pk, o, d)
        cols = pk.color[order]
        img[s:s + chunk] = (w[..., None] * cols).sum(axis=1) + T[:, None] * scene.background
        acc[s:s + chunk] = 1.0 - T
        wsum = w.sum(axis=1)
        ok = wsum > 0
        dd = np.zeros(len(d))
        dd[ok] = (w[ok] * ts[ok]).sum(axis=1) / wsum[ok]
        depth[s:s + chunk] = dd
        valid[s:s + chunk] = ok
    return img.reshape(H, W, 3), acc.reshape(H, W), DepthMap(depth.reshape(H, W), valid.reshape(H, W))


# --- random dropping ---------------------------------------------------------

@dataclass(frozen=True)
class DropSchedule:
    gamma: float
    t_total: int

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise DomainError("gamma must lie in [0, 1)")
        if self.t_total < 1:
            raise DomainError("t_total must be at least 1")


def drop_rate(t: int, sched: DropSchedule) -> float:
    """Linear ramp ``gamma * t / t_total``."""
    if not 0 <= t <= sched.t_total:
        raise DomainError(f"iteration {t} outside [0, {sched.t_total}]")
    if t == sched.t_total:
        return sched.gamma
    return sched.gamma * t / sched.t_total


def drop_gaussians(scene: GaussianScene, r: float, seed) -> GaussianScene:
    """Keep each Gaussian with probability ``1 - r``; survivors get opacity
    ``o / (1 - r)`` (stored unclamped)."""
    if not 0.0 <= r < 1.0:
        raise DomainError("drop rate must lie in [0, 1)")
    if r == 0:
        return scene
    rng = np.random.default_rng(seed)
    keep = rng.random(len(scene)) >= r
    kept = tuple(Gaussian3D(g.mu, g.color, g.opacity / (1.0 - r), g.scale, g.rotation)
                 for g, k in zip(scene.gaussians, keep) if k)
    return GaussianScene(kept, scene.background)


# --- losses --------------------------------------------------------------------

def l1_rgb(rendered: np.ndarray, reference: np.ndarray) -> float:
    a = np.asarray(rendered, dtype=float)
    b = np.asarray(reference, dtype=float)
    if a.shape != b.shape:
        raise DomainError(f"image shapes differ: {a.shape} vs {b.shape}")
    return float(np.abs(a - b).mean())


def l1_depth(rendered: DepthMap, reference: DepthMap, mask: np.ndarray | None = None) -> float:
    if rendered.shape != reference.shape:
        raise DomainError(f"depth shapes differ: {rendered.shape} vs {reference.shape}")
    use = rendered.valid & reference.valid
    if mask is not None:
        use = use & np.asarray(mask, dtype=bool)
    if not use.any():
        raise DomainError("no pixels selected for the depth loss")
    return float(np.abs(rendered.values[use] - reference.values[use]).mean())
