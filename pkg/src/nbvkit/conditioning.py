"""Toy tensor operations for camera conditioning of a video token grid:
a strided 3-D convolution adapter over Plücker ray maps, additive feature
injection and low-rank (LoRA) modulation of query/key/value tokens.

Token grids are stored channels-last as (T, H, W, C).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from nbvkit.camera import PluckerImage
from nbvkit.errors import DomainError

PLUCKER_CHANNELS = 6


@dataclass(frozen=True, eq=False)
class TokenGrid:
    values: np.ndarray  # (T, H, W, C)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 4 or min(v.shape) < 1:
            raise DomainError(f"token grid must be a non-empty (T, H, W, C) array, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DomainError("token values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape[:3]

    @property
    def channels(self) -> int:
        return self.values.shape[3]


def _triple(x) -> tuple[int, int, int]:
    if np.isscalar(x):
        return (int(x),) * 3
    t = tuple(int(v) for v in x)
    if len(t) != 3:
        raise DomainError(f"expected 3 values, got {x!r}")
    return t


@dataclass(frozen=True, eq=False)
class ConvAdapter:
    """3-D convolution, kernel laid out as (kt, kh, kw, C_in, C_out)."""

    kernel: np.ndarray
    bias: np.ndarray
    stride: tuple = (2, 4, 4)
    padding: tuple = (1, 1, 1)

    def __post_init__(self):
        k = np.asarray(self.kernel, dtype=float)
        if k.ndim != 5:
            raise DomainError("kernel must have shape (kt, kh, kw, C_in, C_out)")
        b = np.asarray(self.bias, dtype=float).reshape(-1)
        if b.shape != (k.shape[4],):
            raise DomainError(f"bias length {b.size} does not match {k.shape[4]} output channels")
        stride, padding = _triple(self.stride), _triple(self.padding)
        if min(stride) < 1 or min(padding) < 0:
            raise DomainError("strides must be >= 1 and padding >= 0")
        object.__setattr__(self, "kernel", k)
        object.__setattr__(self, "bias", b)
        object.__setattr__(self, "stride", stride)
        object.__setattr__(self, "padding", padding)

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[3]

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[4]

    @classmethod
    def init(cls, out_channels: int, seed: int = 0, in_channels: int = PLUCKER_CHANNELS,
             kernel_size=(3, 3, 3), stride=(2, 4, 4), padding=(1, 1, 1)) -> "ConvAdapter":
        """Seeded uniform fan-in initialization."""
        ks = _triple(kernel_size)
        rng = np.random.default_rng(seed)
        bound = 1.0 / np.sqrt(in_channels * np.prod(ks))
        kernel = rng.uniform(-bound, bound, size=ks + (in_channels, out_channels))
        bias = rng.uniform(-bound, bound, size=out_channels)
        return cls(kernel, bias, stride, padding)

    def output_dims(self, dims) -> tuple[int, int, int]:
        out = []
        for n, k, s, p in zip(dims, self.kernel.shape[:3], self.stride, self.padding):
            m = (n + 2 * p - k) // s + 1
            if m < 1:
                raise DomainError(f"input extent {n} too small for kernel {k} with padding {p}")
            out.append(m)
        return tuple(out)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim != 4 or x.shape[3] != self.in_channels:
            raise DomainError(f"expected (T, H, W, {self.in_channels}) input, got {x.shape}")
        To, Ho, Wo = self.output_dims(x.shape[:3])
        pt, ph, pw = self.padding
        xp = np.pad(x, ((pt, pt), (ph, ph), (pw, pw), (0, 0)))
        kt, kh, kw = self.kernel.shape[:3]
        win = np.lib.stride_tricks.sliding_window_view(xp, (kt, kh, kw), axis=(0, 1, 2))
        st, sh, sw = self.stride
        win = win[::st, ::sh, ::sw][:To, :Ho, :Wo]  # (To, Ho, Wo, C_in, kt, kh, kw)
        return np.einsum("thwcijk,ijkco->thwo", win, self.kernel) + self.bias

    def to_dict(self) -> dict:
        return {"kernel_dims": list(self.kernel.shape[:3]), "in_channels": self.in_channels,
                "out_channels": self.out_channels, "stride": list(self.stride),
                "padding": list(self.padding), "weights": self.kernel.reshape(-1).tolist(),
                "bias": self.bias.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ConvAdapter":
        shape = tuple(d["kernel_dims"]) + (d["in_channels"], d["out_channels"])
        w = np.asarray(d["weights"], dtype=float)
        if w.size != int(np.prod(shape)):
            raise DomainError(f"adapter weights: expected {int(np.prod(shape))} values, got {w.size}")
        return cls(w.reshape(shape), d["bias"], d.get("stride", (2, 4, 4)), d.get("padding", (1, 1, 1)))


def encode_camera(p: PluckerImage, adapter: ConvAdapter) -> TokenGrid:
    if adapter.in_channels != PLUCKER_CHANNELS:
        raise DomainError(f"adapter takes {adapter.in_channels} channels, ray maps have {PLUCKER_CHANNELS}")
    return TokenGrid(adapter(p.grid))


def inject(x_v: TokenGrid, x_c: TokenGrid) -> TokenGrid:
    """Additive injection of camera features into tokens."""
    if x_v.values.shape != x_c.values.shape:
        raise DomainError(f"token shapes differ: {x_v.values.shape} vs {x_c.values.shape}")
    return TokenGrid(x_v.values + x_c.values)


@dataclass(frozen=True, eq=False)
class LoraWeights:
    down: np.ndarray  # (rank, C)
    up: np.ndarray    # (C, rank)
    alpha: float = 1.0

    def __post_init__(self):
        d = np.atleast_2d(np.asarray(self.down, dtype=float))
        u = np.asarray(self.up, dtype=float)
        if u.ndim == 1:
            u = u[:, None]
        r, C = d.shape
        if u.shape != (C, r):
            raise DomainError(f"up must have shape ({C}, {r}), got {u.shape}")
        if not 1 <= r < C:
            raise DomainError(f"rank must satisfy 1 <= rank < channels, got rank {r}, channels {C}")
        if not self.alpha >= 0:
            raise DomainError("alpha must be non-negative")
        object.__setattr__(self, "down", d)
        object.__setattr__(self, "up", u)
        object.__setattr__(self, "alpha", float(self.alpha))

    @property
    def rank(self) -> int:
        return self.down.shape[0]

    @property
    def channels(self) -> int:
        return self.down.shape[1]

    @classmethod
    def init(cls, channels: int, rank: int, alpha: float = 1.0, seed: int = 0) -> "LoraWeights":
        rng = np.random.default_rng(seed)
        return cls(rng.standard_normal((rank, channels)) / np.sqrt(channels),
                   rng.standard_normal((channels, rank)) / np.sqrt(rank), alpha)

    def to_dict(self) -> dict:
        return {"rank": self.rank, "down": self.down.tolist(), "up": self.up.tolist(), "alpha": self.alpha}

    @classmethod
    def from_dict(cls, d: dict) -> "LoraWeights":
        w = cls(d["down"], d["up"], d.get("alpha", 1.0))
        if "rank" in d and int(d["rank"]) != w.rank:
            raise DomainError(f"declared rank {d['rank']} does not match weights ({w.rank})")
        return w


def lora_delta(x_l: TokenGrid, w: LoraWeights) -> np.ndarray:
    """``alpha * W_u (W_d x)`` per token."""
    if x_l.channels != w.channels:
        raise DomainError(f"control tokens have {x_l.channels} channels, weights expect {w.channels}")
    return w.alpha * ((x_l.values @ w.down.T) @ w.up.T)


def lora_modulate(q: TokenGrid, x_l: TokenGrid, w: LoraWeights) -> TokenGrid:
    if q.values.shape != x_l.values.shape:
        raise DomainError(f"query and control token shapes differ: {q.values.shape} vs {x_l.values.shape}")
    if w.alpha == 0:
        return TokenGrid(q.values.copy())
    delta = lora_delta(x_l, w)
    # only touch entries with a nonzero delta so e.g. -0.0 survives untouched
    return TokenGrid(np.where(delta != 0, q.values + delta, q.values))


def load_weights(path) -> tuple[ConvAdapter | None, LoraWeights | None]:
    d = json.loads(Path(path).read_text())
    adapter = ConvAdapter.from_dict(d["adapter"]) if "adapter" in d else None
    lora = LoraWeights.from_dict(d["lora"]) if "lora" in d else None
    return adapter, lora


def save_weights(path, adapter: ConvAdapter | None = None, lora: LoraWeights | None = None) -> None:
    d = {}
    if adapter is not None:
        d["adapter"] = adapter.to_dict()
    if lora is not None:
        d["lora"] = lora.to_dict()
    Path(path).write_text(json.dumps(d, indent=1))
