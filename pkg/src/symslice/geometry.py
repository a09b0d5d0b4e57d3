"""Closed-form plane/point math used by every other module.

Planes are stored as a unit normal ``n`` plus a signed offset ``d`` such that
``n . p = d`` for every point ``p`` on the plane.  ``(n, d)`` and ``(-n, -d)``
denote the same plane; the canonical representative has the first normal
component with magnitude above 1e-9 positive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import Degenerate, EmptyCloud

DEGENERACY_THRESHOLD = 1e-6
_SIGN_EPS = 1e-9


def _as_vec3(p) -> np.ndarray:
    a = np.asarray(p, dtype=np.float64)
    if a.shape[-1] != 3:
        raise ValueError(f"expected 3-vectors, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class Plane:
    """Plane n.p = d with unit normal n."""

    n: np.ndarray
    d: float

    def __post_init__(self):
        n = _as_vec3(self.n).reshape(3)
        nrm = float(np.linalg.norm(n))
        if abs(nrm - 1.0) > 1e-12:
            if nrm < DEGENERACY_THRESHOLD:
                raise Degenerate("normal has near-zero length")
            n = n / nrm
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "d", float(self.d) / (nrm if abs(nrm - 1.0) > 1e-12 else 1.0))

    def canonical(self) -> "Plane":
        """Fix the (n, d) vs (-n, -d) ambiguity."""
        n, d = self.n, self.d
        for comp in n:
            if abs(comp) > _SIGN_EPS:
                if comp < 0:
                    return Plane(-n, -d)
                return self
        return self

    def homogeneous(self) -> np.ndarray:
        """Unit 4-vector (a, b, c, d') with a*x + b*y + c*z + d' = 0."""
        beta = np.array([self.n[0], self.n[1], self.n[2], -self.d])
        return beta / np.linalg.norm(beta)

    def param4(self) -> np.ndarray:
        """Unit 4-vector (n, d)/||(n, d)|| used by the plane-parameter metric."""
        v = np.array([self.n[0], self.n[1], self.n[2], self.d])
        return v / np.linalg.norm(v)


@dataclass(frozen=True)
class NormRecord:
    """Affine record mapping input points to the unit box: p -> (p - center)/scale."""

    center: np.ndarray
    scale: float

    def __post_init__(self):
        object.__setattr__(self, "center", _as_vec3(self.center).reshape(3))
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    def apply(self, pts: np.ndarray) -> np.ndarray:
        return (np.asarray(pts, dtype=np.float64) - self.center) / self.scale

    def invert(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts, dtype=np.float64) * self.scale + self.center


@dataclass
class Cloud:
    """Ordered 3D point set with provenance."""

    points: np.ndarray
    kind: str = "full"
    norm: NormRecord | None = None

    def __post_init__(self):
        self.points = np.ascontiguousarray(_as_vec3(self.points).reshape(-1, 3))
        if self.points.shape[0] == 0:
            raise EmptyCloud("cloud has no points")
        if self.kind not in ("full", "partial"):
            raise ValueError(f"unknown cloud kind {self.kind!r}")

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class Rotation:
    """Proper rotation (orthonormal, det +1)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64).reshape(3, 3)
        if np.max(np.abs(m.T @ m - np.eye(3))) > 1e-9:
            raise ValueError("matrix is not orthonormal")
        if np.linalg.det(m) < 0:
            raise ValueError("matrix is a reflection, not a rotation")
        object.__setattr__(self, "matrix", m)

    def apply(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts, dtype=np.float64) @ self.matrix.T

    @staticmethod
    def identity() -> "Rotation":
        return Rotation(np.eye(3))

    @staticmethod
    def about_y(angle: float) -> "Rotation":
        c, s = np.cos(angle), np.sin(angle)
        return Rotation(np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]))


def reflect_point(p, s: Plane) -> np.ndarray:
    """Mirror p across s: p - 2 n (p.n - d).  Accepts a single point or (N, 3)."""
    p = _as_vec3(p)
    dist = p @ s.n - s.d
    return p - 2.0 * np.multiply.outer(dist, s.n)


def signed_distance(p, s: Plane):
    """p.n - d; positive on the side the normal points to."""
    p = _as_vec3(p)
    return p @ s.n - s.d


def offset_target(p, s: Plane) -> np.ndarray:
    """Vector y = -(p.n - d) n such that p + y lies on s."""
    p = _as_vec3(p)
    dist = p @ s.n - s.d
    return -np.multiply.outer(dist, s.n)


def plane_from_homogeneous(beta) -> Plane:
    """Plane from a unit homogeneous 4-vector (a, b, c, d')."""
    beta = np.asarray(beta, dtype=np.float64).reshape(4)
    nrm = np.linalg.norm(beta[:3])
    if nrm < DEGENERACY_THRESHOLD:
        raise Degenerate(f"||(a,b,c)|| = {nrm:.3e} describes no finite plane")
    return Plane(beta[:3] / nrm, -beta[3] / nrm).canonical()


def transform_plane(s: Plane, r: Rotation, t, scale: float) -> Plane:
    """Plane containing the image of s under p -> r.(p*scale) + t."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    t = _as_vec3(t).reshape(3)
    n_new = r.matrix @ s.n
    # a point on s maps to r.(p*scale) + t; its distance along n_new:
    # n_new . (r.(p*scale) + t) = scale*(n . p) + n_new . t = scale*d + n_new . t
    d_new = scale * s.d + float(n_new @ t)
    return Plane(n_new, d_new).canonical()
