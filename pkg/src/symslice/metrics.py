"""Training losses and evaluation metrics for predicted symmetry planes.

- offsets loss: L1 between predicted and target per-pixel plane offsets.
- plane-parameter error: squared difference of unit 4-vectors, minimized over
  the ground-truth planes and the sign ambiguity.
- symmetry distance error: mean squared distance from reflected samples to
  their nearest neighbors on the object.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .errors import ShapeMismatch
from .geometry import Plane, plane_from_homogeneous, reflect_point
from .kdtree import KdIndex

SDE_DEFAULT_SAMPLES = 1000


@dataclass
class GroundTruth:
    """All valid symmetry planes of one object plus its sampled point set O."""

    planes: list[Plane]
    object_points: np.ndarray
    _index: KdIndex | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.planes:
            raise ValueError("at least one ground-truth plane required")
        self.planes = [p.canonical() for p in self.planes]
        self.object_points = np.asarray(self.object_points, dtype=np.float64).reshape(-1, 3)
        if self.object_points.shape[0] < 1:
            raise ValueError("object point set must be non-empty")

    @property
    def index(self) -> KdIndex:
        if self._index is None:
            self._index = KdIndex(self.object_points)
        return self._index


def offsets_loss(pred: ag.Tensor, target) -> ag.Tensor:
    """Differentiable mean absolute offset error."""
    target = ag.as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"offsets_loss: {pred.shape} vs {target.shape}")
    return ag.l1_mean(pred, target)


def _as_param4(pred) -> np.ndarray:
    if isinstance(pred, Plane):
        return pred.param4()
    beta = np.asarray(pred, dtype=np.float64).reshape(4)
    # homogeneous (a,b,c,d') carries d = -d'
    return plane_from_homogeneous(beta).param4()


def gte(pred, gt: GroundTruth) -> float:
    """Squared parameter error against the closest ground-truth plane.

    Both sides are unit 4-vectors (n, d)/||(n, d)||; minimized over the
    ground-truth planes and over the sign flip of either side.
    """
    p4 = _as_param4(pred)
    best = np.inf
    for plane in gt.planes:
        g4 = plane.param4()
        for s in (1.0, -1.0):
            best = min(best, float(np.sum((p4 - s * g4) ** 2)))
    return best


def closest_gt_param4(beta: np.ndarray, gt: GroundTruth) -> np.ndarray:
    """Ground-truth homogeneous 4-vector (sign resolved) nearest to beta.

    Used to build the differentiable training loss: the returned target is in
    the same (a, b, c, d') convention as the solver output.
    """
    beta = np.asarray(beta, dtype=np.float64).reshape(4)
    best, best_t = np.inf, None
    for plane in gt.planes:
        h = plane.homogeneous()
        for s in (1.0, -1.0):
            v = float(np.sum((beta - s * h) ** 2))
            if v < best:
                best, best_t = v, s * h
    return best_t


def gte_loss(beta: ag.Tensor, gt: GroundTruth) -> ag.Tensor:
    """Differentiable sum of squared differences to the closest gt plane."""
    target = ag.Tensor(closest_gt_param4(beta.data, gt))
    diff = ag.sub(beta, target)
    return ag.sum_all(ag.mul(diff, diff))


def sde(
    pred: Plane,
    gt: GroundTruth,
    samples: int = SDE_DEFAULT_SAMPLES,
    seed: int = 0,
) -> float:
    """Mean squared distance between reflected samples of O and O itself."""
    pts = gt.object_points
    rng = np.random.default_rng(seed)
    n = pts.shape[0]
    if samples >= n:
        chosen = rng.integers(0, n, size=samples) if samples > n else np.arange(n)
    else:
        chosen = rng.choice(n, size=samples, replace=False)
    reflected = reflect_point(pts[chosen], pred)
    nn = gt.index.nearest(reflected)
    return float(np.mean(np.sum((reflected - pts[nn]) ** 2, axis=1)))


def sde_brute(pred: Plane, gt: GroundTruth, samples: int = SDE_DEFAULT_SAMPLES, seed: int = 0) -> float:
    """Brute-force O(n^2) oracle for sde; identical sampling."""
    pts = gt.object_points
    rng = np.random.default_rng(seed)
    n = pts.shape[0]
    if samples >= n:
        chosen = rng.integers(0, n, size=samples) if samples > n else np.arange(n)
    else:
        chosen = rng.choice(n, size=samples, replace=False)
    reflected = reflect_point(pts[chosen], pred)
    d2 = ((reflected[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
    return float(np.mean(d2.min(axis=1)))


def angular_error(pred: Plane, gt: GroundTruth) -> float:
    """Smallest normal angle to any ground-truth plane, in degrees [0, 90]."""
    best = 90.0
    for plane in gt.planes:
        dot = min(1.0, abs(float(pred.n @ plane.n)))
        best = min(best, float(np.degrees(np.arccos(dot))))
    return best


@dataclass
class MetricRow:
    object_id: str
    gte: float
    sde: float
    angular_error_deg: float
    eigengap: float
    status: str = "ok"


def write_metric_report(rows: list[MetricRow], path) -> None:
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["object_id", "gte", "sde", "angular_error_deg", "eigengap", "status"])
        for r in rows:
            wr.writerow(
                [
                    r.object_id,
                    repr(float(r.gte)),
                    repr(float(r.sde)),
                    repr(float(r.angular_error_deg)),
                    repr(float(r.eigengap)),
                    r.status,
                ]
            )
