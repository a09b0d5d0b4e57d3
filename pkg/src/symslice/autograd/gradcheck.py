"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor

DEFAULT_STEP = 1e-6


def gradcheck(f, inputs, h: float = DEFAULT_STEP, max_coords: int | None = None, seed: int = 0):
    """Max relative error between analytic and central-difference gradients.

    f maps the given leaf Tensors to a scalar Tensor.  When max_coords is set,
    only that many randomly probed coordinates per input are compared (for
    expensive functions); otherwise every coordinate is checked.
    """
    inputs = list(inputs)
    for t in inputs:
        t.requires_grad = True
        t.zero_grad()
    loss = f(*inputs)
    loss.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for t, a in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        idxs = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idxs = rng.choice(flat.size, size=max_coords, replace=False)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            fp = f(*inputs).item()
            flat[i] = orig - h
            fm = f(*inputs).item()
            flat[i] = orig
            num = (fp - fm) / (2.0 * h)
            ana = a.reshape(-1)[i]
            err = abs(ana - num) / max(1.0, abs(ana), abs(num))
            worst = max(worst, err)
    return worst
