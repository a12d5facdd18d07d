"""Scale/bias alignment of relative depth to absolute depth in inverse-depth
space.

The fitted model is ``1/d_v ~ scale / d_m + bias`` over the usable pixels
(mask & both depths valid). It is linear in (scale, bias), so the least
squares solution comes from a 2x2 normal-equation solve.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from nbvkit.errors import DegenerateInputError, DomainError
from nbvkit.pointcloud import DepthMap

MAX_CONDITION = 1e12


@dataclass(frozen=True)
class CalibrationParams:
    scale: float
    bias: float
    residual: float = 0.0  # RMS inverse-depth error over the pixels used
    pixels_used: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.scale) and math.isfinite(self.bias)):
            raise DomainError("calibration parameters must be finite")
        if not (self.residual >= 0 and math.isfinite(self.residual)):
            raise DomainError("residual must be finite and non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def _solve_2x2(A: list[list[float]], rhs: list[float]) -> tuple[float, float]:
    """Gaussian elimination with partial pivoting."""
    (a, b), (c, d) = A
    e, f = rhs
    if abs(c) > abs(a):
        a, b, c, d, e, f = c, d, a, b, f, e
    m = c / a
    d2 = d - m * b
    f2 = f - m * e
    y = f2 / d2
    x = (e - b * y) / a
    return x, y


def usable_pixels(d_m: DepthMap, d_v: DepthMap, mask: np.ndarray | None = None) -> np.ndarray:
    if d_m.shape != d_v.shape:
        raise DomainError(f"depth shapes differ: {d_m.shape} vs {d_v.shape}")
    use = d_m.valid & d_v.valid
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != d_m.shape:
            raise DomainError(f"mask shape {mask.shape} does not match depth {d_m.shape}")
        use = use & mask
    return use


def calibrate(d_m: DepthMap, d_v: DepthMap, mask: np.ndarray | None = None) -> CalibrationParams:
    """Least-squares (scale, bias) with ``scale/d_m + bias ~ 1/d_v``.

    Sums are accumulated with ``math.fsum`` in row-major pixel order, so the
    result depends only on the usable pixel values.
    """
    use = usable_pixels(d_m, d_v, mask)
    n = int(np.count_nonzero(use))
    if n < 2:
        raise DomainError(f"need at least 2 usable pixels, found {n}")
    x = 1.0 / d_m.values[use]
    y = 1.0 / d_v.values[use]

    sxx = math.fsum(x * x)
    sx = math.fsum(x)
    sxy = math.fsum(x * y)
    sy = math.fsum(y)
    A = [[sxx, sx], [sx, float(n)]]
    cond = np.linalg.cond(np.array(A))
    if not math.isfinite(cond) or cond > MAX_CONDITION:
        raise DegenerateInputError("inverse depth is (nearly) constant over the mask")
    scale, bias = _solve_2x2(A, [sxy, sy])

    r = scale * x + bias - y
    residual = math.sqrt(math.fsum(r * r) / n)
    return CalibrationParams(scale, bias, residual, n)


def objective(d_m: DepthMap, d_v: DepthMap, mask, scale: float, bias: float) -> float:
    """Sum of squared inverse-depth residuals over the usable pixels."""
    use = usable_pixels(d_m, d_v, mask)
    r = scale / d_m.values[use] + bias - 1.0 / d_v.values[use]
    return math.fsum(r * r)


def apply_calibration(d_m: DepthMap, params: CalibrationParams) -> DepthMap:
    """Depth ``1/(scale/d_m + bias)``; non-positive inverse depth is invalid."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(d_m.valid, params.scale / np.where(d_m.valid, d_m.values, 1.0) + params.bias, 0.0)
        valid = d_m.valid & (inv > 0) & np.isfinite(inv)
        depth = np.where(valid, 1.0 / np.where(valid, inv, 1.0), 0.0)
    return DepthMap(depth, valid)
