"""Unit-box normalization, BEV occupancy grids, and height slicing.

Axis convention (fixed for the whole package): array axis 0 is height (H),
axis 1 is depth (D), axis 2 is width (W).  World y is height, world z is
depth, world x is width.  Voxel index per axis: floor((coord + 0.5) * size),
clamped to [0, size - 1].
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import BadMagic, EmptyCloud, OutOfBox, ZeroExtent
from .geometry import Cloud, NormRecord

GRID_MAGIC = b"SYMG"
NORM_MARGIN = 0.95
_BOX_SLACK = 1e-9


@dataclass(frozen=True)
class GridSpec:
    """Grid resolution plus slicing parameters (N anchors, context radius K)."""

    H: int = 32
    D: int = 32
    W: int = 32
    N: int = 8
    K: int = 2

    def __post_init__(self):
        for name in ("H", "D", "W", "N"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.K < 0:
            raise ValueError("K must be non-negative")
        if self.N > self.H:
            raise ValueError("N must not exceed H")
        if 2 * self.K + 1 > self.H:
            raise ValueError("2K+1 must not exceed H")
        for name in ("H", "D", "W"):
            if getattr(self, name) % 4 != 0:
                raise ValueError(f"{name} must be divisible by 4 (encoder downsampling)")

    def anchors(self) -> list[int]:
        """Evenly spaced slice anchors floor((i+0.5)*H/N + 0.5), ascending."""
        return [int(np.floor((i + 0.5) * self.H / self.N + 0.5)) for i in range(self.N)]


@dataclass
class OccupancyGrid:
    values: np.ndarray  # H x D x W, uint8 in {0, 1}
    spec: GridSpec

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.uint8)
        if v.shape != (self.spec.H, self.spec.D, self.spec.W):
            raise ValueError(f"grid shape {v.shape} does not match spec")
        self.values = v


@dataclass
class Slice:
    channels: np.ndarray  # (2K+1) x D x W
    anchor: int


def normalize_cloud(c: Cloud) -> tuple[Cloud, NormRecord]:
    """Center on the bounding-box midpoint and scale the largest extent to 0.95."""
    if len(c) == 0:
        raise EmptyCloud("cannot normalize an empty cloud")
    lo = c.points.min(axis=0)
    hi = c.points.max(axis=0)
    extent = float(np.max(hi - lo))
    if extent <= 0.0:
        raise ZeroExtent("all points are identical")
    rec = NormRecord(center=(lo + hi) / 2.0, scale=extent / NORM_MARGIN)
    out = Cloud(rec.apply(c.points), kind=c.kind, norm=rec)
    return out, rec


def voxelize(c: Cloud, spec: GridSpec) -> OccupancyGrid:
    """Binary occupancy grid of a normalized cloud over the unit box."""
    pts = c.points
    if pts.size == 0:
        raise EmptyCloud("cannot voxelize an empty cloud")
    if np.any(np.abs(pts) > 0.5 + _BOX_SLACK):
        worst = float(np.max(np.abs(pts)))
        raise OutOfBox(f"coordinate magnitude {worst} exceeds the unit box")
    sizes = np.array([spec.H, spec.D, spec.W])
    # world (x, y, z) -> grid (H=y, D=z, W=x)
    ordered = pts[:, [1, 2, 0]]
    idx = np.floor((ordered + 0.5) * sizes).astype(np.int64)
    idx = np.clip(idx, 0, sizes - 1)
    values = np.zeros((spec.H, spec.D, spec.W), dtype=np.uint8)
    values[idx[:, 0], idx[:, 1], idx[:, 2]] = 1
    return OccupancyGrid(values, spec)


def make_slices(g: OccupancyGrid) -> list[Slice]:
    """N slabs of 2K+1 channels centered on evenly spaced anchors, bottom-to-top."""
    spec = g.spec
    out = []
    for anchor in spec.anchors():
        chans = np.zeros((2 * spec.K + 1, spec.D, spec.W), dtype=np.uint8)
        lo = anchor - spec.K
        for j in range(2 * spec.K + 1):
            h = lo + j
            if 0 <= h < spec.H:
                chans[j] = g.values[h]
        out.append(Slice(chans, anchor))
    return out


def anchor_world_coords(spec: GridSpec, anchor: int, stride: int = 1) -> np.ndarray:
    """(D/stride) x (W/stride) x 3 world coordinates of voxel-block centers.

    Entry [u, v] is the center of the stride x stride block at depth-block u,
    width-block v, on the anchor channel's height mid-plane.
    """
    if spec.D % stride or spec.W % stride:
        raise ValueError("stride must divide D and W")
    if not 0 <= anchor < spec.H:
        raise ValueError("anchor outside grid")
    y = (anchor + 0.5) / spec.H - 0.5
    du = (np.arange(spec.D // stride) * stride + (stride - 1) / 2.0 + 0.5) / spec.D - 0.5
    wv = (np.arange(spec.W // stride) * stride + (stride - 1) / 2.0 + 0.5) / spec.W - 0.5
    out = np.empty((spec.D // stride, spec.W // stride, 3))
    out[:, :, 0] = wv[None, :]  # world x = width
    out[:, :, 1] = y
    out[:, :, 2] = du[:, None]  # world z = depth
    return out


def anchor_grid_coords(spec: GridSpec, stride: int = 1) -> np.ndarray:
    """N x (D/stride) x (W/stride) x 3 coordinates for all anchors, ascending."""
    return np.stack([anchor_world_coords(spec, a, stride) for a in spec.anchors()])


def dump_grid(g: OccupancyGrid, path) -> None:
    """Flat binary dump: magic 'SYMG', u32 H, D, W (LE), then H*D*W bytes."""
    with open(path, "wb") as f:
        f.write(GRID_MAGIC)
        f.write(struct.pack("<III", g.spec.H, g.spec.D, g.spec.W))
        f.write(g.values.tobytes())


def load_grid_dump(path) -> tuple[np.ndarray, tuple[int, int, int]]:
    """Read a SYMG dump back as (values, (H, D, W))."""
    with open(path, "rb") as f:
        head = f.read(16)
        if len(head) < 16 or head[:4] != GRID_MAGIC:
            raise BadMagic(f"{path} is not a SYMG grid dump")
        h, d, w = struct.unpack("<III", head[4:16])
        raw = f.read(h * d * w)
        if len(raw) != h * d * w:
            raise BadMagic(f"{path} is truncated")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, d, w).copy(), (h, d, w)
