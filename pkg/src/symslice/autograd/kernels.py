"""Hot numeric kernels with two interchangeable backends.

conv2d is computed as im2col followed by a BLAS matmul; the numba backend
jit-compiles the gather/scatter loops, the pure-numpy backend uses
sliding_window_view.  Selection: env var SYMSLICE_BACKEND=numpy forces the
numpy path; anything else (default) uses numba when importable.  Both
backends produce the same values to floating-point roundoff; tests assert
agreement.
"""

from __future__ import annotations

import os

import numpy as np

_FORCED = os.environ.get("SYMSLICE_BACKEND", "").strip().lower()

if _FORCED not in ("", "numpy", "numba"):
    raise ValueError(f"SYMSLICE_BACKEND must be 'numpy' or 'numba', got {_FORCED!r}")

if _FORCED == "numpy":
    _HAVE_NUMBA = False
else:
    try:
        import numba

        _HAVE_NUMBA = True
    except ImportError:  # pragma: no cover - mirror always provides numba
        if _FORCED == "numba":
            raise
        _HAVE_NUMBA = False


def backend_name() -> str:
    return "numba" if _HAVE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# conv2d: x [B,Cin,H,W], w [Cout,Cin,k,k], b [Cout] -> y [B,Cout,Ho,Wo]
# ---------------------------------------------------------------------------

def _pad_input(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _out_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


# col layout is transposed relative to the textbook one: [Cin*k*k, B*Ho*Wo],
# so the gather/scatter inner loop runs contiguously over output columns.

def _im2col_numpy(xp, k, stride, ho, wo):
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # B,Cin,Ho,Wo,k,k
    col = win.transpose(1, 4, 5, 0, 2, 3).reshape(
        xp.shape[1] * k * k, xp.shape[0] * ho * wo
    )
    return np.ascontiguousarray(col)


if _HAVE_NUMBA:

    @numba.njit(cache=True)
    def _im2col_loops(xp, k, stride, ho, wo):
        bs, cin = xp.shape[0], xp.shape[1]
        col = np.empty((cin * k * k, bs * ho * wo))
        for ci in range(cin):
            for u in range(k):
                for v in range(k):
                    ck = (ci * k + u) * k + v
                    for n in range(bs):
                        for i in range(ho):
                            iu = i * stride + u
                            row0 = (n * ho + i) * wo
                            for j in range(wo):
                                col[ck, row0 + j] = xp[n, ci, iu, j * stride + v]
        return col

    @numba.njit(cache=True)
    def _col2im_loops(gcol, bs, cin, hp, wp, k, stride, ho, wo):
        gxp = np.zeros((bs, cin, hp, wp))
        for ci in range(cin):
            for u in range(k):
                for v in range(k):
                    ck = (ci * k + u) * k + v
                    for n in range(bs):
                        for i in range(ho):
                            iu = i * stride + u
                            row0 = (n * ho + i) * wo
                            for j in range(wo):
                                gxp[n, ci, iu, j * stride + v] += gcol[ck, row0 + j]
        return gxp


def _im2col(xp, k, stride, ho, wo):
    if _HAVE_NUMBA:
        return _im2col_loops(xp, k, stride, ho, wo)
    return _im2col_numpy(xp, k, stride, ho, wo)


def _col2im_numpy(gcol, bs, cin, hp, wp, k, stride, ho, wo):
    gxp = np.zeros((bs, cin, hp, wp))
    g6 = gcol.reshape(cin, k, k, bs, ho, wo)
    for u in range(k):
        for v in range(k):
            gxp[:, :, u : u + stride * ho : stride, v : v + stride * wo : stride] += (
                g6[:, u, v].transpose(1, 0, 2, 3)
            )
    return gxp


def conv2d_forward(x, w, b, stride, pad, return_col: bool = False):
    bs, cin = x.shape[0], x.shape[1]
    cout, k = w.shape[0], w.shape[2]
    ho = _out_size(x.shape[2], k, stride, pad)
    wo = _out_size(x.shape[3], k, stride, pad)
    xp = _pad_input(x, pad)
    col = _im2col(xp, k, stride, ho, wo)
    y = w.reshape(cout, cin * k * k) @ col  # [Cout, B*Ho*Wo]
    y += b[:, None]
    y = np.ascontiguousarray(y.reshape(cout, bs, ho, wo).transpose(1, 0, 2, 3))
    if return_col:
        return y, col
    return y


def conv2d_backward(x, w, gy, stride, pad, col=None):
    bs, cin, h, wdt = x.shape
    cout, k = w.shape[0], w.shape[2]
    ho, wo = gy.shape[2], gy.shape[3]
    if col is None:
        xp = _pad_input(x, pad)
        col = _im2col(xp, k, stride, ho, wo)
    gy_mat = np.ascontiguousarray(gy.transpose(1, 0, 2, 3)).reshape(cout, bs * ho * wo)
    gw = (gy_mat @ col.T).reshape(cout, cin, k, k)
    gb = gy_mat.sum(axis=1)
    gcol = w.reshape(cout, cin * k * k).T @ gy_mat
    if _HAVE_NUMBA:
        gxp = _col2im_loops(gcol, bs, cin, h + 2 * pad, wdt + 2 * pad, k, stride, ho, wo)
    else:
        gxp = _col2im_numpy(gcol, bs, cin, h + 2 * pad, wdt + 2 * pad, k, stride, ho, wo)
    gx = gxp[:, :, pad : pad + h, pad : pad + wdt] if pad else gxp
    return np.ascontiguousarray(gx), gw, gb


# ---------------------------------------------------------------------------
# k-d tree nearest neighbor over a flat array representation.
# Nodes: node_point[i] (index into pts), node_axis[i], children node_left/right
# (-1 for none).  Ties broken toward the smallest point index.
# ---------------------------------------------------------------------------

def _kd_query_impl(pts, node_point, node_axis, node_left, node_right, queries, out):
    nq = queries.shape[0]
    stack = np.empty(4 * pts.shape[0] + 64, dtype=np.int64)
    for qi in range(nq):
        qx = queries[qi, 0]
        qy = queries[qi, 1]
        qz = queries[qi, 2]
        best = -1
        best_d = np.inf
        top = 0
        stack[top] = 0
        top += 1
        while top > 0:
            top -= 1
            node = stack[top]
            if node < 0:
                continue
            p = node_point[node]
            dx = pts[p, 0] - qx
            dy = pts[p, 1] - qy
            dz = pts[p, 2] - qz
            d = dx * dx + dy * dy + dz * dz
            if d < best_d or (d == best_d and p < best):
                best_d = d
                best = p
            axis = node_axis[node]
            if axis == 0:
                diff = qx - pts[p, 0]
            elif axis == 1:
                diff = qy - pts[p, 1]
            else:
                diff = qz - pts[p, 2]
            if diff <= 0.0:
                near = node_left[node]
                far = node_right[node]
            else:
                near = node_right[node]
                far = node_left[node]
            if diff * diff <= best_d and far >= 0:
                stack[top] = far
                top += 1
            if near >= 0:
                stack[top] = near
                top += 1
        out[qi] = best
    return out


if _HAVE_NUMBA:
    _kd_query_compiled = numba.njit(cache=True)(_kd_query_impl)


def kd_query(pts, node_point, node_axis, node_left, node_right, queries):
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    out = np.empty(queries.shape[0], dtype=np.int64)
    fn = _kd_query_compiled if _HAVE_NUMBA else _kd_query_impl
    return fn(pts, node_point, node_axis, node_left, node_right, queries, out)
