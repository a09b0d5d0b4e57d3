"""Cyclic Jacobi eigendecomposition for small symmetric matrices.

Deterministic and dependency-free; at 4x4 the Jacobi sweep converges in a
handful of iterations.  Eigenvalues are returned ascending with matching
eigenvector columns.
"""

from __future__ import annotations

import numpy as np

from ..errors import SolverFailure

SWEEP_LIMIT = 100
OFFDIAG_TOL = 1e-14


def jacobi_eigh(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations."""
    a = np.array(m, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("matrix must be square")
    if np.max(np.abs(a - a.T)) > 1e-9 * max(1.0, np.max(np.abs(a))):
        raise ValueError("matrix must be symmetric")
    a = (a + a.T) / 2.0
    v = np.eye(n)
    scale = max(1.0, float(np.max(np.abs(a))))
    for _ in range(SWEEP_LIMIT):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                off = max(off, abs(a[p, q]))
        if off <= OFFDIAG_TOL * scale:
            vals = np.diag(a).copy()
            order = np.argsort(vals, kind="stable")
            return vals[order], v[:, order]
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= OFFDIAG_TOL * scale:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = c
                rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
                a = (a + a.T) / 2.0
                v = v @ rot
    raise SolverFailure(f"Jacobi did not converge within {SWEEP_LIMIT} sweeps")


def canonicalize_sign(vec: np.ndarray) -> np.ndarray:
    """Flip sign so the largest-magnitude component is positive."""
    i = int(np.argmax(np.abs(vec)))
    return -vec if vec[i] < 0 else vec
