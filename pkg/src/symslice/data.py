"""Procedural symmetric shapes, cloud file I/O, and partial-view synthesis.

Shapes are generated in a canonical frame: the primary symmetry plane is
x = 0 (normal (1,0,0), d = 0); bi-symmetric shapes add z = 0.  Each shape
samples half its points from a seeded process and mirrors them, so symmetry
is exact before noise.  Rotation augmentation happens downstream via
random_rotation + transform_plane.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import EmptyResult, ParseError, UnsupportedFormat
from .geometry import Cloud, Plane, Rotation, reflect_point
from .metrics import GroundTruth

FAMILIES = ("mirrored_blob", "box_union", "cylinder_cluster", "bi_symmetric")

_PLANE_X = Plane(np.array([1.0, 0.0, 0.0]), 0.0)
_PLANE_Z = Plane(np.array([0.0, 0.0, 1.0]), 0.0)


@dataclass(frozen=True)
class ShapeRecipe:
    family: str
    point_count: int = 2048
    noise_sigma: float = 0.005
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.point_count < 4:
            raise ValueError("point_count too small")


@dataclass(frozen=True)
class Viewpoint:
    eye: np.ndarray
    image_size: int = 64

    def __post_init__(self):
        object.__setattr__(self, "eye", np.asarray(self.eye, dtype=np.float64).reshape(3))
        if self.image_size < 16:
            raise ValueError("image_size must be at least 16")


def _blob_half(rng: np.random.Generator, n: int) -> np.ndarray:
    """Sample n points from a random mixture of anisotropic gaussian blobs."""
    k = int(rng.integers(3, 7))
    centers = rng.uniform(-0.8, 0.8, size=(k, 3))
    scales = rng.uniform(0.05, 0.35, size=(k, 3))
    which = rng.integers(0, k, size=n)
    return centers[which] + rng.normal(size=(n, 3)) * scales[which]


def _box_half(rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniform samples from a union of random axis-aligned boxes."""
    k = int(rng.integers(2, 5))
    lo = rng.uniform(-0.9, 0.5, size=(k, 3))
    ext = rng.uniform(0.15, 0.7, size=(k, 3))
    which = rng.integers(0, k, size=n)
    return lo[which] + rng.uniform(size=(n, 3)) * ext[which]


def _cylinder_half(rng: np.random.Generator, n: int) -> np.ndarray:
    """Surface samples from a cluster of randomly posed cylinders."""
    k = int(rng.integers(2, 4))
    pts = np.empty((n, 3))
    which = rng.integers(0, k, size=n)
    for c in range(k):
        mask = which == c
        m = int(mask.sum())
        if m == 0:
            continue
        radius = rng.uniform(0.08, 0.3)
        height = rng.uniform(0.3, 1.0)
        center = rng.uniform(-0.6, 0.6, size=3)
        theta = rng.uniform(0.0, 2 * np.pi, size=m)
        local = np.stack(
            [radius * np.cos(theta), rng.uniform(-height / 2, height / 2, size=m), radius * np.sin(theta)],
            axis=1,
        )
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        # rotate local y to the random axis
        y = np.array([0.0, 1.0, 0.0])
        v = np.cross(y, axis)
        s = np.linalg.norm(v)
        if s < 1e-12:
            rot = np.eye(3) if axis[1] > 0 else np.diag([1.0, -1.0, -1.0])
        else:
            vx = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
            rot = np.eye(3) + vx + vx @ vx * ((1 - y @ axis) / (s * s))
        pts[mask] = local @ rot.T + center
    return pts


def gen_shape(recipe: ShapeRecipe) -> tuple[Cloud, GroundTruth]:
    """Generate a symmetric cloud and its ground-truth planes."""
    rng = np.random.default_rng(recipe.seed)
    if recipe.family == "bi_symmetric":
        quarter = recipe.point_count // 4
        base = _blob_half(rng, quarter)
        half = np.concatenate([base, reflect_point(base, _PLANE_X)])
        pts = np.concatenate([half, reflect_point(half, _PLANE_Z)])
        planes = [_PLANE_X, _PLANE_Z]
    else:
        half_n = recipe.point_count // 2
        sampler = {
            "mirrored_blob": _blob_half,
            "box_union": _box_half,
            "cylinder_cluster": _cylinder_half,
        }[recipe.family]
        base = sampler(rng, half_n)
        pts = np.concatenate([base, reflect_point(base, _PLANE_X)])
        planes = [_PLANE_X]
    if recipe.noise_sigma > 0:
        pts = pts + rng.normal(size=pts.shape) * recipe.noise_sigma
    cloud = Cloud(pts, kind="full")
    return cloud, GroundTruth(planes=list(planes), object_points=pts.copy())


def gen_vehicle(seed: int, point_count: int = 2048, noise_sigma: float = 0.01) -> tuple[Cloud, GroundTruth, tuple[float, float, float]]:
    """Car-like shape: elongated body + cabin, symmetric about z = 0.

    Canonical pose: length along x, width along z, height along y.  Returns
    the cloud, ground truth, and the (length, width, height) extents in
    meters.  Used by the box-refinement evaluation.
    """
    rng = np.random.default_rng(seed)
    length = rng.uniform(3.8, 5.2)
    width = rng.uniform(1.7, 2.1)
    height = rng.uniform(1.4, 1.8)
    half_n = point_count // 2
    n_body = half_n * 2 // 3
    n_cabin = half_n - n_body
    # half-width samples (z in [0, width/2]), mirrored below
    body = np.stack(
        [
            rng.uniform(-length / 2, length / 2, size=n_body),
            rng.uniform(0.0, 0.55 * height, size=n_body),
            rng.uniform(0.0, width / 2, size=n_body),
        ],
        axis=1,
    )
    cabin_len = 0.5 * length
    cabin_off = rng.uniform(-0.15, 0.05) * length
    cabin = np.stack(
        [
            rng.uniform(cabin_off - cabin_len / 2, cabin_off + cabin_len / 2, size=n_cabin),
            rng.uniform(0.55 * height, height, size=n_cabin),
            rng.uniform(0.0, 0.42 * width, size=n_cabin),
        ],
        axis=1,
    )
    half = np.concatenate([body, cabin])
    half[:, 1] -= height / 2
    pts = np.concatenate([half, reflect_point(half, _PLANE_Z)])
    if noise_sigma > 0:
        pts = pts + rng.normal(size=pts.shape) * noise_sigma
    cloud = Cloud(pts, kind="full")
    return cloud, GroundTruth(planes=[_PLANE_Z], object_points=pts.copy()), (length, width, height)


def random_rotation(seed: int) -> Rotation:
    """Uniform SO(3) rotation from a seeded unit quaternion."""
    rng = np.random.default_rng(seed)
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    m = np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )
    return Rotation(m)


def partial_view(c: Cloud, v: Viewpoint) -> Cloud:
    """Keep only the nearest point per pixel of a perspective depth buffer."""
    eye = v.eye
    fwd = -eye / np.linalg.norm(eye)  # camera looks at the origin
    up = np.array([0.0, 1.0, 0.0])
    if abs(fwd @ up) > 0.99:
        up = np.array([1.0, 0.0, 0.0])
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    cam_up = np.cross(right, fwd)
    rel = c.points - eye
    depth = rel @ fwd
    in_front = depth > 1e-9
    if not np.any(in_front):
        raise EmptyResult("no point projects in front of the eye")
    idx_all = np.nonzero(in_front)[0]
    rel = rel[in_front]
    depth = depth[in_front]
    u = (rel @ right) / depth
    w = (rel @ cam_up) / depth
    # field of view wide enough to hold the unit box from the given eye
    half_tan = max(np.max(np.abs(u)), np.max(np.abs(w))) + 1e-9
    size = v.image_size
    pu = np.clip(((u / half_tan + 1.0) * 0.5 * size).astype(np.int64), 0, size - 1)
    pw = np.clip(((w / half_tan + 1.0) * 0.5 * size).astype(np.int64), 0, size - 1)
    pixel = pu * size + pw
    order = np.lexsort((idx_all, depth))
    seen: dict[int, int] = {}
    for k in order:
        px = int(pixel[k])
        if px not in seen:
            seen[px] = int(idx_all[k])
    keep = np.array(sorted(seen.values()), dtype=np.int64)
    return Cloud(c.points[keep].copy(), kind="partial")


# -- cloud file I/O ----------------------------------------------------------

def save_cloud_xyz(c: Cloud, path) -> None:
    with open(path, "w") as f:
        for p in c.points:
            f.write(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r}\n")


def _load_xyz(path) -> np.ndarray:
    pts = []
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) < 3:
                raise ParseError(f"{path}:{ln}: expected 3 floats, got {line!r}")
            try:
                pts.append([float(parts[0]), float(parts[1]), float(parts[2])])
            except ValueError as e:
                raise ParseError(f"{path}:{ln}: {e}") from e
    return np.asarray(pts, dtype=np.float64).reshape(-1, 3)


def _load_obj(path, surface_sample: int | None, seed: int) -> np.ndarray:
    verts = []
    faces = []
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise ParseError(f"{path}:{ln}: vertex needs 3 coordinates")
                try:
                    verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
                except ValueError as e:
                    raise ParseError(f"{path}:{ln}: {e}") from e
            elif parts[0] == "f":
                try:
                    idx = [int(tok.split("/")[0]) for tok in parts[1:]]
                except ValueError as e:
                    raise ParseError(f"{path}:{ln}: {e}") from e
                # fan-triangulate polygons; OBJ indices are 1-based
                for i in range(1, len(idx) - 1):
                    faces.append((idx[0] - 1, idx[i] - 1, idx[i + 1] - 1))
    verts = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    if surface_sample is None or not faces:
        return verts
    tri = verts[np.asarray(faces, dtype=np.int64)]
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    areas = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    if areas.sum() <= 0:
        return verts
    rng = np.random.default_rng(seed)
    which = rng.choice(len(areas), size=surface_sample, p=areas / areas.sum())
    r1 = np.sqrt(rng.uniform(size=surface_sample))
    r2 = rng.uniform(size=surface_sample)
    pts = (
        (1 - r1)[:, None] * a[which]
        + (r1 * (1 - r2))[:, None] * b[which]
        + (r1 * r2)[:, None] * c[which]
    )
    return pts


def _load_ply(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    if not raw.startswith(b"ply"):
        raise ParseError(f"{path}:1: missing 'ply' magic")
    try:
        header_end = raw.index(b"end_header\n") + len(b"end_header\n")
    except ValueError:
        raise ParseError(f"{path}: header has no end_header line") from None
    header_lines = raw[:header_end].decode("ascii", errors="replace").splitlines()
    fmt = None
    count = None
    props: list[tuple[str, str]] = []
    in_vertex = False
    for ln, line in enumerate(header_lines, 1):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            if len(parts) < 2 or parts[1] not in ("ascii", "binary_little_endian"):
                raise ParseError(f"{path}:{ln}: unsupported format line {line!r}")
            fmt = parts[1]
        elif parts[0] == "element":
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                try:
                    count = int(parts[2])
                except (IndexError, ValueError):
                    raise ParseError(f"{path}:{ln}: bad vertex element line {line!r}") from None
        elif parts[0] == "property" and in_vertex:
            if len(parts) != 3:
                raise ParseError(f"{path}:{ln}: bad property line {line!r}")
            props.append((parts[1], parts[2]))
    if fmt is None or count is None:
        raise ParseError(f"{path}: header missing format or vertex element")
    names = [n for _, n in props]
    for need in ("x", "y", "z"):
        if need not in names:
            raise ParseError(f"{path}: vertex element lacks property {need!r}")
    body = raw[header_end:]
    if fmt == "ascii":
        rows = body.decode("ascii").split("\n")
        pts = np.empty((count, 3))
        for i in range(count):
            toks = rows[i].split()
            if len(toks) < len(props):
                raise ParseError(f"{path}: vertex row {i} has {len(toks)} values, expected {len(props)}")
            vals = {n: float(toks[j]) for j, (_, n) in enumerate(props)}
            pts[i] = (vals["x"], vals["y"], vals["z"])
        return pts
    np_types = {
        "float": np.float32,
        "float32": np.float32,
        "double": np.float64,
        "float64": np.float64,
        "int": np.int32,
        "int32": np.int32,
        "uint": np.uint32,
        "uint32": np.uint32,
        "uchar": np.uint8,
        "uint8": np.uint8,
        "char": np.int8,
        "int8": np.int8,
        "short": np.int16,
        "int16": np.int16,
        "ushort": np.uint16,
        "uint16": np.uint16,
    }
    try:
        dtype = np.dtype([(n, np.dtype(np_types[t]).newbyteorder("<")) for t, n in props])
    except KeyError as e:
        raise ParseError(f"{path}: unsupported property type {e}") from None
    if len(body) < count * dtype.itemsize:
        raise ParseError(f"{path}: binary body truncated")
    rec = np.frombuffer(body, dtype=dtype, count=count)
    return np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)


def load_cloud(path, surface_sample: int | None = None, seed: int = 0) -> Cloud:
    """Read an OBJ, PLY, or XYZ file as a point cloud."""
    p = str(path)
    low = p.lower()
    if low.endswith(".xyz") or low.endswith(".txt"):
        pts = _load_xyz(p)
    elif low.endswith(".obj"):
        pts = _load_obj(p, surface_sample, seed)
    elif low.endswith(".ply"):
        pts = _load_ply(p)
    else:
        raise UnsupportedFormat(f"unrecognized cloud extension: {p}")
    if pts.shape[0] == 0:
        raise ParseError(f"{p}: no points found")
    return Cloud(pts, kind="full")


# -- dataset manifests -------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    id: str
    family: str
    seed: int
    split: str


def write_manifest(entries: list[ManifestEntry], path) -> None:
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["id", "family", "seed", "split"])
        for e in entries:
            wr.writerow([e.id, e.family, e.seed, e.split])


def read_manifest(path) -> list[ManifestEntry]:
    out = []
    with open(path, newline="") as f:
        rd = csv.DictReader(f)
        for row in rd:
            out.append(ManifestEntry(row["id"], row["family"], int(row["seed"]), row["split"]))
    return out


def default_manifest(seed: int, n_train: int = 500, n_val: int = 100, n_test: int = 100) -> list[ManifestEntry]:
    """Round-robin over the shape families with per-sample derived seeds."""
    entries = []
    counter = 0
    for split, n in (("train", n_train), ("val", n_val), ("test", n_test)):
        for i in range(n):
            family = FAMILIES[counter % len(FAMILIES)]
            entries.append(ManifestEntry(f"{split}{i:04d}", family, seed * 1_000_003 + counter, split))
            counter += 1
    return entries
