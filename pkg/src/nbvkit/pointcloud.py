"""Point clouds, nearest-distance index, depth back-projection, z-buffered
visibility masks and voxel-deduplicated merging."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from nbvkit.camera import CameraPose, Intrinsics, grid_ray_directions
from nbvkit.errors import DomainError


@dataclass(frozen=True, eq=False)
class PointCloud:
    positions: np.ndarray
    colors: np.ndarray | None = None

    def __post_init__(self):
        p = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(p)):
            raise DomainError("point positions must be finite")
        object.__setattr__(self, "positions", p)
        if self.colors is not None:
            c = np.asarray(self.colors, dtype=float).reshape(-1, 3)
            if len(c) != len(p):
                raise DomainError("colors and positions differ in length")
            if c.size and (c.min() < 0 or c.max() > 1):
                raise DomainError("colors must lie in [0, 1]")
            object.__setattr__(self, "colors", c)

    def __len__(self):
        return len(self.positions)

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 3)))


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Per-pixel distance along the unit viewing ray (not z-depth)."""

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        m = np.asarray(self.valid, dtype=bool)
        if v.shape != m.shape or v.ndim != 2:
            raise DomainError("depth values and valid mask must be matching 2-D arrays")
        m = m & np.isfinite(v) & (v > 0)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "valid", m)

    @property
    def shape(self):
        return self.values.shape

    @classmethod
    def from_values(cls, values: np.ndarray) -> "DepthMap":
        v = np.asarray(values, dtype=float)
        with np.errstate(invalid="ignore"):
            return cls(v, np.isfinite(v) & (v > 0))


@dataclass(frozen=True, eq=False)
class VisibilityMask:
    filled: np.ndarray

    @property
    def fill_ratio(self) -> float:
        return int(self.filled.sum()) / self.filled.size

    @property
    def empty_count(self) -> int:
        return int(self.filled.size - self.filled.sum())


class SpatialIndex:
    """Exact nearest-distance queries over a fixed point set.

    Backed by a KD-tree for candidate search; distances are recomputed from
    the stored points so results agree bit-for-bit with a brute-force scan.
    """

    _K = 4  # candidates rechecked per query
    _SLACK = 1e-9  # relative slack under which distances count as tied

    def __init__(self, positions: np.ndarray):
        self.points = np.ascontiguousarray(positions, dtype=float).reshape(-1, 3)
        self._tree = cKDTree(self.points) if len(self.points) else None

    def __len__(self):
        return len(self.points)

    def nearest(self, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(distances, indices) of the nearest indexed point per query row."""
        q = np.asarray(queries, dtype=float).reshape(-1, 3)
        if self._tree is None:
            return np.full(len(q), np.inf), np.full(len(q), -1)
        k = min(self._K, len(self.points))
        dt, idx = self._tree.query(q, k=k)
        dt, idx = dt.reshape(len(q), k), idx.reshape(len(q), k)
        d = np.sqrt(((self.points[idx] - q[:, None, :]) ** 2).sum(axis=-1))
        # lowest index among exact ties, matching a first-minimum linear scan
        order = np.lexsort((idx, d), axis=-1)[:, 0]
        rows = np.arange(len(q))
        dist, best = d[rows, order], idx[rows, order]
        # if even the k-th candidate is within slack, more tied points may exist
        crowded = np.flatnonzero(dt[:, -1] <= dt[:, 0] * (1 + self._SLACK) + 1e-12) if k < len(self.points) else []
        for i in crowded:
            c = np.asarray(self._tree.query_ball_point(q[i], dt[i, 0] * (1 + self._SLACK) + 1e-12), dtype=np.int64)
            dc = np.sqrt(((self.points[c] - q[i]) ** 2).sum(axis=-1))
            j = np.lexsort((c, dc))[0]
            dist[i], best[i] = dc[j], c[j]
        return dist, best

    def min_distances(self, queries: np.ndarray) -> np.ndarray:
        return self.nearest(queries)[0]


def build_index(cloud: PointCloud) -> SpatialIndex:
    return SpatialIndex(cloud.positions)


def min_distance(index: SpatialIndex, p) -> float:
    return float(index.min_distances(np.asarray(p, dtype=float).reshape(1, 3))[0])


def back_project(depth: DepthMap, pose: CameraPose, intr: Intrinsics, colors: np.ndarray | None = None) -> PointCloud:
    if depth.shape != (intr.height, intr.width):
        raise DomainError(f"depth shape {depth.shape} does not match {intr.height}x{intr.width}")
    dirs = grid_ray_directions(pose, intr)
    m = depth.valid
    pts = pose.center + depth.values[m][:, None] * dirs[m]
    cols = None
    if colors is not None:
        colors = np.asarray(colors, dtype=float)
        if colors.shape[:2] != depth.shape:
            raise DomainError("color image does not match depth shape")
        cols = np.clip(colors[m], 0.0, 1.0)
    return PointCloud(pts, cols)


def _disc_offsets(radius: float) -> np.ndarray:
    r = int(math.ceil(radius)) + 1
    oy, ox = np.mgrid[-r:r + 1, -r:r + 1]
    return np.stack([ox.ravel(), oy.ravel()], axis=1)


def render_mask(cloud: PointCloud, pose: CameraPose, intr: Intrinsics,
                point_radius_px: float = 1.0) -> tuple[VisibilityMask, DepthMap]:
    """Z-buffered disc splatting of ``cloud`` into the camera.

    Every point covers the pixel it projects into plus all pixels whose
    centers lie within ``point_radius_px`` of its projection. Nearest depth
    wins per pixel; exact ties go to the lowest point index.
    """
    if point_radius_px < 0:
        raise DomainError("point radius must be non-negative")
    H, W = intr.height, intr.width
    depth = np.zeros((H, W))
    filled = np.zeros((H, W), dtype=bool)
    if len(cloud) == 0:
        return VisibilityMask(filled), DepthMap(depth, filled)

    pc = pose.world_to_camera(cloud.positions)
    front = pc[:, 2] > 0
    idx = np.nonzero(front)[0]
    pc = pc[front]
    u = intr.fx * pc[:, 0] / pc[:, 2] + intr.cx
    v = intr.fy * pc[:, 1] / pc[:, 2] + intr.cy
    dist = np.linalg.norm(cloud.positions[idx] - pose.center, axis=1)

    iu = np.floor(u + 0.5)
    iv = np.floor(v + 0.5)
    cols, rows, pid, dd = [], [], [], []
    r2 = point_radius_px * point_radius_px
    for ox, oy in _disc_offsets(point_radius_px):
        pu, pv = iu + ox, iv + oy
        if ox == 0 and oy == 0:
            hit = np.ones(len(u), dtype=bool)
        else:
            hit = (pu - u) ** 2 + (pv - v) ** 2 <= r2
        hit &= (pu >= 0) & (pu < W) & (pv >= 0) & (pv < H)
        cols.append(pu[hit])
        rows.append(pv[hit])
        pid.append(idx[hit])
        dd.append(dist[hit])
    cols = np.concatenate(cols).astype(np.int64)
    rows = np.concatenate(rows).astype(np.int64)
    pid = np.concatenate(pid)
    dd = np.concatenate(dd)
    if len(pid) == 0:
        return VisibilityMask(filled), DepthMap(depth, filled)

    flat = rows * W + cols
    order = np.lexsort((pid, dd, flat))
    flat, dd = flat[order], dd[order]
    first = np.ones(len(flat), dtype=bool)
    first[1:] = flat[1:] != flat[:-1]
    depth.ravel()[flat[first]] = dd[first]
    filled.ravel()[flat[first]] = True
    return VisibilityMask(filled), DepthMap(depth, filled)


def voxel_keys(positions: np.ndarray, voxel_size: float) -> np.ndarray:
    return np.floor(np.asarray(positions) / voxel_size).astype(np.int64)


def merge(base: PointCloud, addition: PointCloud, voxel_size: float) -> PointCloud:
    """Union of two clouds keeping the first point seen per voxel (base first)."""
    if not voxel_size > 0:
        raise DomainError("voxel_size must be positive")
    pos = np.concatenate([base.positions, addition.positions])
    if base.colors is not None and addition.colors is not None:
        cols = np.concatenate([base.colors, addition.colors])
    elif base.colors is not None and len(addition) == 0:
        cols = base.colors
    elif addition.colors is not None and len(base) == 0:
        cols = addition.colors
    else:
        cols = None
    if len(pos) == 0:
        return PointCloud.empty()
    _, first = np.unique(voxel_keys(pos, voxel_size), axis=0, return_index=True)
    keep = np.sort(first)
    return PointCloud(pos[keep], None if cols is None else cols[keep])
