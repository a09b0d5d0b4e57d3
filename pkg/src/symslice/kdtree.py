"""Flat-array k-d tree with exact nearest-neighbor answers.

Ties are broken toward the smallest point index so results match the
brute-force argmin exactly.  The query loop lives in autograd.kernels so it
shares the numba/numpy backend switch.
"""

from __future__ import annotations

import numpy as np

from .autograd import kernels


class KdIndex:
    """Immutable nearest-neighbor index over a fixed point set."""

    def __init__(self, points: np.ndarray):
        pts = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))
        if pts.shape[0] == 0:
            raise ValueError("cannot index an empty point set")
        self.points = pts
        n = pts.shape[0]
        self._point = np.empty(n, dtype=np.int64)
        self._axis = np.empty(n, dtype=np.int64)
        self._left = np.full(n, -1, dtype=np.int64)
        self._right = np.full(n, -1, dtype=np.int64)
        self._count = 0
        self._build(np.arange(n, dtype=np.int64), 0)

    def _build(self, idxs: np.ndarray, depth: int) -> int:
        axis = depth % 3
        # median split; equal keys ordered by index for determinism
        order = np.lexsort((idxs, self.points[idxs, axis]))
        idxs = idxs[order]
        mid = len(idxs) // 2
        node = self._count
        self._count += 1
        self._point[node] = idxs[mid]
        self._axis[node] = axis
        if mid > 0:
            self._left[node] = self._build(idxs[:mid], depth + 1)
        if mid + 1 < len(idxs):
            self._right[node] = self._build(idxs[mid + 1 :], depth + 1)
        return node

    def nearest(self, queries: np.ndarray) -> np.ndarray:
        """Indices of the nearest stored point for each query row."""
        q = np.asarray(queries, dtype=np.float64)
        single = q.ndim == 1
        q = q.reshape(-1, 3)
        out = kernels.kd_query(
            self.points, self._point, self._axis, self._left, self._right, q
        )
        return out[0] if single else out


def brute_force_nearest(points: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """O(n*m) oracle; argmin picks the smallest index on ties."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    d2 = ((q[:, None, :] - points[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)
