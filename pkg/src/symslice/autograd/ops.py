"""Differentiable operators over Tensor nodes.

Exactly the operator set the symmetry network needs: conv2d, group norm,
pointwise gates, tensor plumbing (concat/reshape/permute/select), L1 loss,
and the constrained least-squares head (gram + smallest eigenvector).
"""

from __future__ import annotations

import numpy as np

from ..errors import EigengapTooSmall, ShapeMismatch
from . import kernels
from .eigen import canonicalize_sign, jacobi_eigh
from .tensor import Tensor, as_tensor, make_node

EIGENGAP_THRESHOLD = 1e-8
GN_EPS = 1e-5


def _check_same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeMismatch(f"{op}: {a.shape} vs {b.shape}")


# -- pointwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "add")

    def bw(g):
        a.accumulate_grad(g)
        b.accumulate_grad(g)

    return make_node(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "sub")

    def bw(g):
        a.accumulate_grad(g)
        b.accumulate_grad(-g)

    return make_node(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "mul")

    def bw(g):
        a.accumulate_grad(g * b.data)
        b.accumulate_grad(g * a.data)

    return make_node(a.data * b.data, (a, b), bw)


def scalar_mul(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)

    def bw(g):
        a.accumulate_grad(g * c)

    return make_node(a.data * c, (a,), bw)


def add_scalar(a, c: float) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        a.accumulate_grad(g)

    return make_node(a.data + float(c), (a,), bw)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0  # subgradient at 0 is 0

    def bw(g):
        a.accumulate_grad(g * mask)

    return make_node(np.where(mask, a.data, 0.0), (a,), bw)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = 1.0 / (1.0 + np.exp(-a.data))

    def bw(g):
        a.accumulate_grad(g * y * (1.0 - y))

    return make_node(y, (a,), bw)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)

    def bw(g):
        a.accumulate_grad(g * (1.0 - y * y))

    return make_node(y, (a,), bw)


# -- plumbing ----------------------------------------------------------------

def concat(parts, axis: int) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    data = np.concatenate([p.data for p in parts], axis=axis)
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            p.accumulate_grad(g[tuple(sl)])

    return make_node(data, tuple(parts), bw)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)

    def bw(g):
        a.accumulate_grad(g.reshape(a.shape))

    return make_node(a.data.reshape(shape), (a,), bw)


def permute(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inv = np.argsort(axes)

    def bw(g):
        a.accumulate_grad(np.transpose(g, inv))

    return make_node(np.ascontiguousarray(np.transpose(a.data, axes)), (a,), bw)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    a = as_tensor(a)
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)

    def bw(g):
        full = np.zeros_like(a.data)
        full[sl] = g
        a.accumulate_grad(full)

    return make_node(a.data[sl].copy(), (a,), bw)


def select(a, index: int) -> Tensor:
    """Index along axis 0 (used to pull one sample out of a batch)."""
    a = as_tensor(a)

    def bw(g):
        full = np.zeros_like(a.data)
        full[index] = g
        a.accumulate_grad(full)

    return make_node(a.data[index].copy(), (a,), bw)


def sum_all(a) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        a.accumulate_grad(np.full_like(a.data, float(g)))

    return make_node(a.data.sum(), (a,), bw)


def mean_all(a) -> Tensor:
    a = as_tensor(a)
    n = a.data.size

    def bw(g):
        a.accumulate_grad(np.full_like(a.data, float(g) / n))

    return make_node(a.data.mean(), (a,), bw)


def l1_mean(a, b) -> Tensor:
    """Mean absolute difference; subgradient 0 where the difference is 0."""
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "l1_mean")
    diff = a.data - b.data
    n = diff.size
    sign = np.sign(diff)

    def bw(g):
        a.accumulate_grad(float(g) * sign / n)
        b.accumulate_grad(-float(g) * sign / n)

    return make_node(np.abs(diff).mean(), (a, b), bw)


# -- conv2d ------------------------------------------------------------------

def conv2d(x, w, b, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation over [B,C,H,W] (or [C,H,W]) input."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or w.data.ndim != 4 or b.data.ndim != 1:
        raise ShapeMismatch("conv2d expects x[B,C,H,W], w[Co,Ci,k,k], b[Co]")
    if w.data.shape[1] != xd.shape[1] or b.data.shape[0] != w.data.shape[0]:
        raise ShapeMismatch(
            f"conv2d: x channels {xd.shape[1]}, w {w.data.shape}, b {b.data.shape}"
        )
    if w.data.shape[2] != w.data.shape[3]:
        raise ShapeMismatch("conv2d kernels must be square")
    y, col = kernels.conv2d_forward(xd, w.data, b.data, stride, pad, return_col=True)

    def bw(g):
        g4 = g[None] if squeeze else g
        gx, gw, gb = kernels.conv2d_backward(
            xd, w.data, np.ascontiguousarray(g4), stride, pad, col=col
        )
        x.accumulate_grad(gx[0] if squeeze else gx)
        w.accumulate_grad(gw)
        b.accumulate_grad(gb)

    return make_node(y[0] if squeeze else y, (x, w, b), bw)


# -- group normalization -----------------------------------------------------

def group_norm(x, groups: int, gamma, beta) -> Tensor:
    """Per-sample, per-group standardization followed by an affine transform."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    bs, c = xd.shape[0], xd.shape[1]
    if c % groups != 0:
        raise ShapeMismatch(f"groups {groups} does not divide channels {c}")
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeMismatch("gamma/beta must have one entry per channel")
    spatial = xd.shape[2:]
    grp = xd.reshape(bs, groups, -1)
    m = grp.size // (bs * groups)
    mu = grp.mean(axis=2, keepdims=True)
    var = grp.var(axis=2, keepdims=True)
    ivar = 1.0 / np.sqrt(var + GN_EPS)
    xhat = ((grp - mu) * ivar).reshape(xd.shape)
    gshape = (1, c) + (1,) * len(spatial)
    y = xhat * gamma.data.reshape(gshape) + beta.data.reshape(gshape)

    def bw(g):
        g4 = g[None] if squeeze else g
        sum_axes = (0,) + tuple(range(2, xd.ndim))
        gamma.accumulate_grad((g4 * xhat).sum(axis=sum_axes))
        beta.accumulate_grad(g4.sum(axis=sum_axes))
        gxh = (g4 * gamma.data.reshape(gshape)).reshape(bs, groups, -1)
        xh = xhat.reshape(bs, groups, -1)
        t1 = gxh.mean(axis=2, keepdims=True)
        t2 = (gxh * xh).mean(axis=2, keepdims=True)
        gx = (ivar * (gxh - t1 - xh * t2)).reshape(xd.shape)
        x.accumulate_grad(gx[0] if squeeze else gx)

    return make_node(y[0] if squeeze else y, (x, gamma, beta), bw)


# -- constrained least-squares head ------------------------------------------

def gram(a) -> Tensor:
    """A^T A for a 2-D design matrix A."""
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeMismatch("gram expects a 2-D matrix")
    m = a.data.T @ a.data

    def bw(g):
        a.accumulate_grad(a.data @ (g + g.T))

    return make_node(m, (a,), bw)


def smallest_eigenvector(m) -> Tensor:
    """Unit eigenvector of the smallest eigenvalue of a symmetric matrix.

    Sign-canonicalized (largest-magnitude entry positive).  Backward applies
    the symmetric eigenvector derivative and therefore requires the gap
    lambda1 - lambda0 to stay above EIGENGAP_THRESHOLD.
    """
    m = as_tensor(m)
    vals, vecs = jacobi_eigh(m.data)
    gap = float(vals[1] - vals[0])
    if gap < EIGENGAP_THRESHOLD:
        raise EigengapTooSmall(f"eigengap {gap:.3e} below {EIGENGAP_THRESHOLD:.0e}")
    v0 = canonicalize_sign(vecs[:, 0])
    if float(v0 @ vecs[:, 0]) < 0:
        vecs = vecs.copy()
        vecs[:, 0] = -vecs[:, 0]

    def bw(g):
        gm = np.zeros_like(m.data)
        for j in range(1, vals.shape[0]):
            coeff = float(g @ vecs[:, j]) / (vals[0] - vals[j])
            gm += coeff * np.outer(vecs[:, j], v0)
        m.accumulate_grad(gm)

    return make_node(v0.copy(), (m,), bw)
