"""File formats: binary PLY clouds, NAVD depth maps, PNG images/masks and
trajectory JSON."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from nbvkit.camera import CameraPose, Intrinsics, Trajectory
from nbvkit.errors import DomainError
from nbvkit.pointcloud import DepthMap, PointCloud

NAVD_MAGIC = b"NAVD"
_NAVD_HEADER = struct.Struct("<4sIII")


# --- PLY -------------------------------------------------------------------

def write_ply(path, cloud: PointCloud) -> None:
    n = len(cloud)
    has_color = cloud.colors is not None
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}",
              "property float x", "property float y", "property float z"]
    if has_color:
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header.append("end_header")
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    if has_color:
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    rec = np.empty(n, dtype=fields)
    rec["x"], rec["y"], rec["z"] = cloud.positions.T.astype("<f4")
    if has_color:
        rgb = np.round(np.clip(cloud.colors, 0, 1) * 255).astype(np.uint8)
        rec["red"], rec["green"], rec["blue"] = rgb.T
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(rec.tobytes())


_PLY_TYPES = {"float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
              "uchar": "u1", "uint8": "u1", "char": "i1", "int8": "i1",
              "short": "<i2", "ushort": "<u2", "int": "<i4", "uint": "<u4",
              "int32": "<i4", "uint32": "<u4"}


def read_ply(path) -> PointCloud:
    """Read a binary little-endian PLY with a ``vertex`` element."""
    with open(path, "rb") as f:
        if f.readline().strip() != b"ply":
            raise DomainError(f"{path}: not a PLY file")
        fmt = None
        elements: list[tuple[str, int, list]] = []
        while True:
            line = f.readline()
            if not line:
                raise DomainError(f"{path}: truncated header")
            tok = line.decode("ascii").split()
            if not tok:
                continue
            if tok[0] == "format":
                fmt = tok[1]
            elif tok[0] == "element":
                elements.append((tok[1], int(tok[2]), []))
            elif tok[0] == "property":
                if tok[1] == "list":
                    raise DomainError(f"{path}: list properties are not supported")
                elements[-1][2].append((tok[2], _PLY_TYPES[tok[1]]))
            elif tok[0] == "end_header":
                break
        if fmt != "binary_little_endian":
            raise DomainError(f"{path}: only binary_little_endian PLY is supported")
        vertex = None
        for name, count, props in elements:
            data = np.frombuffer(f.read(count * np.dtype(props).itemsize), dtype=props, count=count)
            if name == "vertex":
                vertex = data
                break
    if vertex is None:
        raise DomainError(f"{path}: no vertex element")
    pos = np.stack([vertex["x"], vertex["y"], vertex["z"]], axis=1).astype(float)
    names = vertex.dtype.names
    colors = None
    if all(c in names for c in ("red", "green", "blue")):
        colors = np.stack([vertex["red"], vertex["green"], vertex["blue"]], axis=1) / 255.0
    return PointCloud(pos, colors)


# --- NAVD depth ------------------------------------------------------------

def write_navd(path, depth: DepthMap) -> None:
    H, W = depth.shape
    vals = np.where(depth.valid, depth.values, 0.0).astype("<f4")
    with open(path, "wb") as f:
        f.write(_NAVD_HEADER.pack(NAVD_MAGIC, W, H, 0))
        f.write(vals.tobytes())


def read_navd(path) -> DepthMap:
    raw = Path(path).read_bytes()
    if len(raw) < _NAVD_HEADER.size:
        raise DomainError(f"{path}: truncated NAVD header")
    magic, W, H, _ = _NAVD_HEADER.unpack_from(raw)
    if magic != NAVD_MAGIC:
        raise DomainError(f"{path}: bad magic {magic!r}")
    body = raw[_NAVD_HEADER.size:]
    if len(body) != 4 * W * H:
        raise DomainError(f"{path}: expected {W * H} floats, found {len(body) // 4}")
    vals = np.frombuffer(body, dtype="<f4").reshape(H, W).astype(float)
    return DepthMap.from_values(vals)


# --- PNG -------------------------------------------------------------------

def write_png(path, image: np.ndarray) -> None:
    img = np.round(np.clip(np.asarray(image, dtype=float), 0, 1) * 255).astype(np.uint8)
    Image.fromarray(img).save(path, format="PNG")


def read_png(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"), dtype=float) / 255.0


def read_mask_png(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L")) > 0


def write_mask_png(path, mask: np.ndarray) -> None:
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8)).save(path, format="PNG")


# --- trajectory JSON ---------------------------------------------------------

def trajectory_to_dict(traj: Trajectory | list, intr: Intrinsics) -> dict:
    return {"frames": [p.to_dict() for p in traj], "intrinsics": intr.to_dict()}


def write_trajectory(path, traj: Trajectory | list, intr: Intrinsics) -> None:
    Path(path).write_text(json.dumps(trajectory_to_dict(traj, intr), indent=1))


def read_trajectory(path) -> tuple[list[CameraPose], Intrinsics]:
    d = json.loads(Path(path).read_text())
    try:
        poses = [CameraPose.from_dict(fr) for fr in d["frames"]]
        intr = Intrinsics.from_dict(d["intrinsics"])
    except KeyError as e:
        raise DomainError(f"{path}: missing key {e}") from None
    return poses, intr
