"""Camera model, per-pixel rays, Plücker embeddings, pose interpolation and
spherical candidate sampling.

Conventions
-----------
* World frame is z-up.
* Camera frame follows OpenCV: x right, y down, z forward.
* ``CameraPose.rotation`` maps camera-frame vectors to world frame and
  ``CameraPose.center`` is the camera position in world coordinates.
* Pixel ``(u, v)`` = (column, row); pixel index ``i`` has its center at
  ``u = i``, so a projected point lands in pixel ``floor(u + 0.5)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from nbvkit.errors import DegenerateInputError, DomainError

ORTHO_TOL = 1e-9
WORLD_UP = np.array([0.0, 0.0, 1.0])

STANDARD = "standard"
PAPER_EXACT = "paper_exact"
RAY_MODES = (STANDARD, PAPER_EXACT)


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise DomainError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if self.width < 1 or self.height < 1:
            raise DomainError("image size must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise DomainError("principal point outside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def K_inv(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    @classmethod
    def from_fov(cls, width: int, height: int, hfov_deg: float) -> "Intrinsics":
        f = 0.5 * width / math.tan(math.radians(hfov_deg) / 2)
        return cls(f, f, width / 2, height / 2, width, height)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "Intrinsics":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


def check_rotation(R: np.ndarray, tol: float = ORTHO_TOL) -> None:
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise DomainError("rotation must be a finite 3x3 matrix")
    if np.abs(R.T @ R - np.eye(3)).max() > tol:
        raise DomainError("rotation is not orthonormal")
    if abs(np.linalg.det(R) - 1.0) > tol:
        raise DomainError("rotation determinant is not +1")


@dataclass(frozen=True, eq=False)
class CameraPose:
    """Camera-to-world rigid transform."""

    rotation: np.ndarray
    center: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        c = np.array(self.center, dtype=float).reshape(3)
        check_rotation(R)
        if not np.all(np.isfinite(c)):
            raise DomainError("camera center must be finite")
        R.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "center", c)

    def __eq__(self, other):
        if not isinstance(other, CameraPose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(self.center, other.center)

    __hash__ = None

    @property
    def forward(self) -> np.ndarray:
        return self.rotation[:, 2]

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.center) @ self.rotation

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls(np.eye(3), np.zeros(3))

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.reshape(-1).tolist(), "center": self.center.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraPose":
        return cls(np.asarray(d["rotation"], dtype=float).reshape(3, 3), np.asarray(d["center"], dtype=float))


@dataclass(frozen=True, eq=False)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = np.array(self.origin, dtype=float).reshape(3)
        d = np.array(self.direction, dtype=float).reshape(3)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise DomainError("ray direction must be unit length")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


@dataclass(frozen=True, eq=False)
class PluckerImage:
    """``grid[f, v, u] = (moment, direction)``, shape (T, H, W, 6)."""

    grid: np.ndarray

    @property
    def frames(self) -> int:
        return self.grid.shape[0]

    @property
    def moments(self) -> np.ndarray:
        return self.grid[..., :3]

    @property
    def directions(self) -> np.ndarray:
        return self.grid[..., 3:]


@dataclass
class Trajectory:
    poses: list = field(default_factory=list)

    def __post_init__(self):
        self.poses = list(self.poses)
        if len(self.poses) < 2:
            raise DomainError("a trajectory needs at least two poses")

    def __len__(self):
        return len(self.poses)

    def __iter__(self):
        return iter(self.poses)

    def __getitem__(self, i):
        return self.poses[i]

    @property
    def centers(self) -> np.ndarray:
        return np.stack([p.center for p in self.poses])


@dataclass(frozen=True)
class SearchSpace:
    """Angular sampling region around the scene center (degrees).

    Absolute azimuth/elevation limits bound where candidates may go; the
    step limits bound the offset from the current pose.
    """

    az_min: float = -45.0
    az_max: float = 45.0
    el_min: float = 0.0
    el_max: float = 60.0
    az_step: float = 30.0
    el_step: float = 15.0

    @classmethod
    def quarter_sphere(cls, az_center: float = 0.0, **kw) -> "SearchSpace":
        return cls(az_min=az_center - 45.0, az_max=az_center + 45.0, **kw)

    def expanded(self, factor: float = 2.0) -> "SearchSpace":
        return SearchSpace(self.az_min, self.az_max, self.el_min, self.el_max,
                           self.az_step * factor, self.el_step * factor)


def _normalize(v: np.ndarray, axis: int = -1) -> np.ndarray:
    return v / np.linalg.norm(v, axis=axis, keepdims=True)


def _check_mode(mode: str) -> None:
    if mode not in RAY_MODES:
        raise DomainError(f"unknown ray mode {mode!r}")


def pixel_ray(pose: CameraPose, intr: Intrinsics, u: float, v: float, mode: str = STANDARD) -> Ray:
    """Ray through pixel ``(u, v)``.

    ``paper_exact`` adds the camera center to the rotated pixel direction
    before normalizing, which only coincides with ``standard`` for a camera
    at the origin.
    """
    _check_mode(mode)
    if not (0 <= u <= intr.width and 0 <= v <= intr.height):
        raise DomainError(f"pixel ({u}, {v}) outside {intr.width}x{intr.height} image")
    d = pose.rotation @ (intr.K_inv @ np.array([u, v, 1.0]))
    if mode == PAPER_EXACT:
        d = d + pose.center
    n = np.linalg.norm(d)
    if n == 0:
        raise DegenerateInputError("zero-length ray direction")
    return Ray(pose.center.copy(), d / n)


def pixel_grid(intr: Intrinsics, H: int | None = None, W: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Pixel coordinates (u, v) of an ``H x W`` grid spread over the image.

    At native resolution these are the integer pixel centers; coarser grids
    sample the centers of equal-sized cells.
    """
    H = intr.height if H is None else H
    W = intr.width if W is None else W
    us = (np.arange(W) + 0.5) * (intr.width / W) - 0.5
    vs = (np.arange(H) + 0.5) * (intr.height / H) - 0.5
    return np.meshgrid(us, vs, indexing="xy")


def grid_ray_directions(pose: CameraPose, intr: Intrinsics, H: int | None = None, W: int | None = None,
                        mode: str = STANDARD) -> np.ndarray:
    """Unit ray directions for every grid pixel, shape (H, W, 3)."""
    _check_mode(mode)
    uu, vv = pixel_grid(intr, H, W)
    pix = np.stack([uu, vv, np.ones_like(uu)], axis=-1)
    d = pix @ intr.K_inv.T @ pose.rotation.T
    if mode == PAPER_EXACT:
        d = d + pose.center
    n = np.linalg.norm(d, axis=-1, keepdims=True)
    if np.any(n == 0):
        raise DegenerateInputError("zero-length ray direction")
    return d / n


def plucker_embed(poses: Sequence[CameraPose], intr: Intrinsics, H: int, W: int,
                  mode: str = STANDARD) -> PluckerImage:
    if len(poses) == 0:
        raise DomainError("need at least one pose")
    if H < 1 or W < 1:
        raise DomainError("grid size must be positive")
    out = np.empty((len(poses), H, W, 6))
    for f, pose in enumerate(poses):
        d = grid_ray_directions(pose, intr, H, W, mode)
        out[f, ..., :3] = np.cross(np.broadcast_to(pose.center, d.shape), d)
        out[f, ..., 3:] = d
    return PluckerImage(out)


# --- rotations -------------------------------------------------------------

def rotation_to_quat(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) with w >= 0."""
    m = np.asarray(R, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    q /= np.linalg.norm(q)
    return q if q[0] >= 0 else -q


def quat_to_rotation(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def axis_angle(axis, angle: float) -> np.ndarray:
    """Rotation matrix for ``angle`` radians about ``axis``."""
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    h = 0.5 * angle
    return quat_to_rotation(np.concatenate([[math.cos(h)], math.sin(h) * a]))


def geodesic_angle(Ra: np.ndarray, Rb: np.ndarray) -> float:
    """Angle of the relative rotation ``Ra^T Rb`` in [0, pi].

    Uses atan2(sin, cos) instead of acos(cos), which loses about half the
    digits near zero; identical rotations give exactly 0.
    """
    M = Ra.T @ Rb
    c = (M[0, 0] + M[1, 1] + M[2, 2] - 1.0) / 2.0
    s = 0.5 * math.sqrt((M[2, 1] - M[1, 2]) ** 2 + (M[0, 2] - M[2, 0]) ** 2 + (M[1, 0] - M[0, 1]) ** 2)
    return math.atan2(s, c)


def quat_slerp(q0: np.ndarray, q1: np.ndarray, s: float) -> np.ndarray:
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    dot = float(q0 @ q1)
    if dot < 0.0:
        q1, dot = -q1, -dot
    dot = min(dot, 1.0)
    theta = math.acos(dot)
    if theta < 1e-12:
        q = (1 - s) * q0 + s * q1
    else:
        sin_t = math.sin(theta)
        q = (math.sin((1 - s) * theta) / sin_t) * q0 + (math.sin(s * theta) / sin_t) * q1
    return q / np.linalg.norm(q)


def slerp_pose(a: CameraPose, b: CameraPose, s: float) -> CameraPose:
    """Shortest-arc rotation slerp with linear center interpolation."""
    if not 0.0 <= s <= 1.0:
        raise DomainError(f"interpolation parameter {s} outside [0, 1]")
    if s == 0.0:
        return a
    if s == 1.0:
        return b
    q = quat_slerp(rotation_to_quat(a.rotation), rotation_to_quat(b.rotation), s)
    return CameraPose(quat_to_rotation(q), (1 - s) * a.center + s * b.center)


def interpolate_trajectory(a: CameraPose, b: CameraPose, n_frames: int) -> Trajectory:
    if n_frames < 2:
        raise DomainError("n_frames must be >= 2")
    return Trajectory([slerp_pose(a, b, i / (n_frames - 1)) for i in range(n_frames)])


# --- look-at and candidate sampling ---------------------------------------

def look_at(center, target, up=WORLD_UP) -> CameraPose:
    """Pose at ``center`` whose optical axis points at ``target``."""
    c = np.asarray(center, dtype=float)
    fwd = np.asarray(target, dtype=float) - c
    n = np.linalg.norm(fwd)
    if n == 0:
        raise DegenerateInputError("look-at target coincides with camera center")
    fwd = fwd / n
    right = np.cross(fwd, np.asarray(up, dtype=float))
    rn = np.linalg.norm(right)
    if rn < 1e-9:
        raise DegenerateInputError("view direction parallel to up vector")
    right = right / rn
    down = np.cross(fwd, right)
    return CameraPose(np.stack([right, down, fwd], axis=1), c)


def look_at_robust(center, target, up=WORLD_UP) -> CameraPose:
    """``look_at`` that swaps in a perturbed up vector when the view is vertical."""
    try:
        return look_at(center, target, up)
    except DegenerateInputError:
        alt = np.asarray(up, dtype=float) + np.array([1e-3, 1.0, 0.0])
        return look_at(center, target, alt)


def spherical_coords(point, origin) -> tuple[float, float, float]:
    """(radius, azimuth_deg, elevation_deg) of ``point`` about ``origin``."""
    d = np.asarray(point, dtype=float) - np.asarray(origin, dtype=float)
    r = float(np.linalg.norm(d))
    az = math.degrees(math.atan2(d[1], d[0]))
    el = math.degrees(math.asin(max(-1.0, min(1.0, d[2] / r)))) if r > 0 else 0.0
    return r, az, el


def spherical_point(origin, r: float, az_deg: float, el_deg: float) -> np.ndarray:
    az, el = math.radians(az_deg), math.radians(el_deg)
    return np.asarray(origin, dtype=float) + r * np.array(
        [math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)]
    )


def sample_candidates(scene_center, curr: CameraPose, k: int, space: SearchSpace, seed,
                      up=WORLD_UP) -> list[CameraPose]:
    """Sample ``k`` look-at poses on the sphere through ``curr`` about ``scene_center``.

    Azimuth and elevation offsets are uniform within the step limits of
    ``space`` and clipped to its absolute limits.
    """
    if k < 1:
        raise DomainError("k must be >= 1")
    o = np.asarray(scene_center, dtype=float)
    r, az0, el0 = spherical_coords(curr.center, o)
    if r == 0:
        raise DomainError("current pose sits at the scene center")
    # express the azimuth in the region's own 360-degree window
    mid = 0.5 * (space.az_min + space.az_max)
    az0 = mid + (az0 - mid + 180.0) % 360.0 - 180.0
    rng = np.random.default_rng(seed)
    az_lo, az_hi = max(space.az_min, az0 - space.az_step), min(space.az_max, az0 + space.az_step)
    el_lo, el_hi = max(space.el_min, el0 - space.el_step), min(space.el_max, el0 + space.el_step)
    # current pose outside the region: sample the whole region instead
    if az_lo > az_hi:
        az_lo, az_hi = space.az_min, space.az_max
    if el_lo > el_hi:
        el_lo, el_hi = space.el_min, space.el_max
    az = rng.uniform(az_lo, az_hi, size=k)
    el = rng.uniform(el_lo, el_hi, size=k)
    return [look_at_robust(spherical_point(o, r, a, e), o, up) for a, e in zip(az, el)]
