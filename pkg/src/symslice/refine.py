"""Symmetry-based refinement of oriented 3D boxes.

World convention matches the rest of the package: y is up, the ground plane
is xz, and yaw rotates about +y.  A box's length axis at yaw 0 points along
+x; its lateral symmetry plane at yaw 0 is z = const with normal (0, 0, 1).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateNormal, LengthMismatch, TooFewPoints
from .geometry import Cloud, Plane, Rotation, transform_plane
from .grid import normalize_cloud
from .network import ModelConfig, ModelParams, forward

MIN_CROP_POINTS = 32
CROP_INFLATE = 1.1
MIN_GROUND_NORMAL = 0.1


def _wrap_pi(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


@dataclass(frozen=True)
class Box3D:
    center: np.ndarray
    size: tuple[float, float, float]  # length, width, height
    yaw: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64).reshape(3))
        if any(s <= 0 for s in self.size):
            raise ValueError("box sizes must be positive")
        object.__setattr__(self, "size", tuple(float(s) for s in self.size))
        object.__setattr__(self, "yaw", _wrap_pi(float(self.yaw)))

    def rotation(self) -> Rotation:
        return Rotation.about_y(self.yaw)

    def symmetry_plane(self) -> Plane:
        """The lateral mid-plane (runs along the box length)."""
        n = self.rotation().matrix @ np.array([0.0, 0.0, 1.0])
        return Plane(n, float(n @ self.center)).canonical()


@dataclass
class RefinementReport:
    yaw_before: list[float]
    yaw_after: list[float]
    yaw_gt: list[float]
    flags: list[str]

    @staticmethod
    def _err(pred: float, gt: float) -> float:
        # boxes are orientation-symmetric under a pi flip
        return min(abs(_wrap_pi(pred - gt)), abs(_wrap_pi(pred - gt + math.pi)))

    def errors_before(self) -> list[float]:
        return [self._err(p, g) for p, g in zip(self.yaw_before, self.yaw_gt)]

    def errors_after(self) -> list[float]:
        return [self._err(p, g) for p, g in zip(self.yaw_after, self.yaw_gt)]

    def mean_before(self) -> float:
        return float(np.mean(self.errors_before())) if self.yaw_gt else 0.0

    def mean_after(self) -> float:
        return float(np.mean(self.errors_after())) if self.yaw_gt else 0.0


def simulate_detections(
    gt_boxes: list[Box3D], yaw_sigma: float, center_sigma: float, seed: int
) -> list[Box3D]:
    """Seeded Gaussian perturbation of yaw and center; sizes unchanged."""
    if yaw_sigma < 0 or center_sigma < 0:
        raise ValueError("sigmas must be non-negative")
    rng = np.random.default_rng(seed)
    out = []
    for b in gt_boxes:
        dyaw = rng.normal() * yaw_sigma
        dc = rng.normal(size=3) * center_sigma
        out.append(Box3D(b.center + dc, b.size, b.yaw + dyaw))
    return out


def refine_box(b: Box3D, s: Plane, translate: bool = True) -> Box3D:
    """Snap the box's heading (and optionally center) to the symmetry plane.

    The new yaw makes the box's lateral axis parallel to the ground-projected
    plane normal, choosing the candidate closest to the detector's yaw; the
    center is translated along that normal onto the plane.
    """
    gx, gz = float(s.n[0]), float(s.n[2])
    gnorm = math.hypot(gx, gz)
    if gnorm <= MIN_GROUND_NORMAL:
        raise DegenerateNormal(f"ground-projected normal {gnorm:.3f} too small")
    # at yaw theta the lateral normal is (sin theta, 0, cos theta)
    cand = math.atan2(gx, gz)
    best = min(
        (cand, cand + math.pi),
        key=lambda y: abs(_wrap_pi(y - b.yaw)),
    )
    new_yaw = _wrap_pi(best)
    center = b.center
    if translate:
        u = np.array([gx / gnorm, 0.0, gz / gnorm])
        denom = float(s.n @ u)
        t = (s.d - float(s.n @ b.center)) / denom
        center = b.center + t * u
    return Box3D(center, b.size, new_yaw)


def crop_to_box(points: np.ndarray, b: Box3D, inflate: float = CROP_INFLATE) -> np.ndarray:
    """Points inside the (slightly inflated) box, expressed in the box frame."""
    rel = np.asarray(points, dtype=np.float64) - b.center
    inv = Rotation.about_y(-b.yaw)
    local = inv.apply(rel)
    half = np.array(b.size) * inflate / 2.0
    # size order (l, w, h) maps to local axes (x, z, y)
    keep = (
        (np.abs(local[:, 0]) <= half[0])
        & (np.abs(local[:, 2]) <= half[1])
        & (np.abs(local[:, 1]) <= half[2])
    )
    return local[keep]


def estimate_plane_in_box(
    points, b: Box3D, params: ModelParams, cfg: ModelConfig
) -> Plane:
    """Run the network on the box-cropped cloud; return the plane in world frame."""
    pts = points.points if isinstance(points, Cloud) else np.asarray(points, dtype=np.float64)
    local = crop_to_box(pts, b)
    if local.shape[0] < MIN_CROP_POINTS:
        raise TooFewPoints(f"{local.shape[0]} points in box, need {MIN_CROP_POINTS}")
    norm_cloud, rec = normalize_cloud(Cloud(local, kind="partial"))
    out = forward(norm_cloud, params, cfg)
    plane = transform_plane(out.plane, Rotation.identity(), rec.center, rec.scale)
    plane = transform_plane(plane, Rotation.about_y(b.yaw), b.center, 1.0)
    return plane


def orientation_error(pred: list[Box3D], gt: list[Box3D]) -> RefinementReport:
    if len(pred) != len(gt):
        raise LengthMismatch(f"{len(pred)} predictions vs {len(gt)} ground truth boxes")
    return RefinementReport(
        yaw_before=[b.yaw for b in pred],
        yaw_after=[b.yaw for b in pred],
        yaw_gt=[b.yaw for b in gt],
        flags=["ok"] * len(gt),
    )


# -- box list / report I/O ---------------------------------------------------

def write_boxes(boxes: list[Box3D], path, ids: list[str] | None = None) -> None:
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["id", "cx", "cy", "cz", "l", "w", "h", "yaw"])
        for i, b in enumerate(boxes):
            bid = ids[i] if ids else f"box{i:04d}"
            wr.writerow(
                [bid] + [repr(float(v)) for v in (*b.center, *b.size, b.yaw)]
            )


def read_boxes(path) -> tuple[list[str], list[Box3D]]:
    ids, boxes = [], []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            ids.append(row["id"])
            boxes.append(
                Box3D(
                    np.array([float(row["cx"]), float(row["cy"]), float(row["cz"])]),
                    (float(row["l"]), float(row["w"]), float(row["h"])),
                    float(row["yaw"]),
                )
            )
    return ids, boxes


def write_report(report: RefinementReport, path, ids: list[str]) -> None:
    eb, ea = report.errors_before(), report.errors_after()
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["id", "yaw_before", "yaw_after", "yaw_gt", "err_before", "err_after", "flag"])
        for i, bid in enumerate(ids):
            wr.writerow(
                [
                    bid,
                    repr(float(report.yaw_before[i])),
                    repr(float(report.yaw_after[i])),
                    repr(float(report.yaw_gt[i])),
                    repr(float(eb[i])),
                    repr(float(ea[i])),
                    report.flags[i],
                ]
            )
        wr.writerow(["mean", "", "", "", repr(float(report.mean_before())), repr(float(report.mean_after())), ""])
