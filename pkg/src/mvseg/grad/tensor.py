"""Dense tensors with a reverse-mode tape.

Tensors wrap numpy arrays and are treated as immutable once produced by an
op. While a `record()` context is active, every op appends one node to the
tape; `Graph.backward` walks the tape in reverse insertion order exactly
once and accumulates gradients additively, so a value consumed by several
ops receives the sum of all path contributions.

Training runs in float32. `set_default_dtype(np.float64)` exists for the
gradient-check suites, which need tighter finite-difference tolerances.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

_default_dtype = np.float32


def set_default_dtype(dtype):
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _default_dtype = dtype.type


def default_dtype():
    return _default_dtype


class Tensor:
    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data)
        if arr.dtype.type not in (np.float32, np.float64):
            arr = arr.astype(_default_dtype)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=_default_dtype))


class Graph:
    """Append-only op tape for one forward pass."""

    __slots__ = ("nodes",)

    def __init__(self):
        # each node: (output tensor, ((parent tensor, grad_fn), ...))
        self.nodes = []

    def backward(self, root: Tensor):
        if root.grad is None:
            root.grad = np.ones_like(root.data)
        for out, pairs in reversed(self.nodes):
            g = out.grad
            if g is None:
                continue
            for parent, fn in pairs:
                contrib = fn(g)
                if parent.grad is None:
                    parent.grad = contrib
                else:
                    parent.grad = parent.grad + contrib


_active: Graph | None = None


def active_graph() -> Graph | None:
    return _active


@contextmanager
def record():
    """Run ops under a fresh tape; yields the Graph for backward()."""
    global _active
    prev = _active
    graph = Graph()
    _active = graph
    try:
        yield graph
    finally:
        _active = prev


@contextmanager
def pause():
    """Temporarily stop recording (e.g. for assignment costs, metrics)."""
    global _active
    prev = _active
    _active = None
    try:
        yield
    finally:
        _active = prev
