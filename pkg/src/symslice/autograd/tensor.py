"""Reverse-mode autodiff over dense float64 arrays.

A Tensor wraps a numpy array plus an optional backward closure recorded at
construction time.  backward() on a scalar runs the tape once; running it a
second time on the same graph raises GraphConsumed.
"""

from __future__ import annotations

import numpy as np

from ..errors import GraphConsumed, NonScalarLoss


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self):
        if self.data.size != 1:
            raise NonScalarLoss(f"backward needs a scalar, got shape {self.shape}")
        if self._consumed:
            raise GraphConsumed("backward already ran on this graph")
        topo: list[Tensor] = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            node._consumed = True
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    def accumulate_grad(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # convenience arithmetic; the real op set lives in ops.py
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)


def make_node(data, parents, backward_fn) -> Tensor:
    """Internal: build a graph node whose gradient flows to tracked parents."""
    out = Tensor(data)
    tracked = tuple(p for p in parents if p.requires_grad or p._parents)
    if tracked:
        out.requires_grad = any(p.requires_grad or p._parents for p in parents)
        out._parents = tracked
        out._backward_fn = backward_fn
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)
