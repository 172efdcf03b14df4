"""Differentiable operations.

Primitive ops carry analytic backward closures; structured blocks
(multi-head attention, mask filters) are compositions of primitives and
get their gradients from the tape. Ops never mutate input buffers.
"""

from __future__ import annotations

import math

import numpy as np

from .. import kernels
from ..errors import ConfigurationError, DimensionError
from .tensor import Tensor, active_graph, as_tensor


def _make(data, *pairs):
    """Create an op output and register its node if a tape is recording."""
    graph = active_graph()
    live = [(p, fn) for p, fn in pairs if p.requires_grad]
    out = Tensor(data, requires_grad=bool(live) and graph is not None)
    if out.requires_grad:
        graph.nodes.append((out, tuple(live)))
    return out


def _unbroadcast(g, shape):
    """Reduce a broadcast gradient back to `shape`."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data,
                 (a, lambda g: _unbroadcast(g, a.shape)),
                 (b, lambda g: _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data,
                 (a, lambda g: _unbroadcast(g, a.shape)),
                 (b, lambda g: _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data,
                 (a, lambda g: _unbroadcast(g * b.data, a.shape)),
                 (b, lambda g: _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data / b.data,
                 (a, lambda g: _unbroadcast(g / b.data, a.shape)),
                 (b, lambda g: _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def neg(a):
    a = as_tensor(a)
    return _make(-a.data, (a, lambda g: -g))


def exp(a):
    a = as_tensor(a)
    y = np.exp(a.data)
    return _make(y, (a, lambda g: g * y))


def log(a):
    a = as_tensor(a)
    return _make(np.log(a.data), (a, lambda g: g / a.data))


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, a.data.dtype.type(0)),
                 (a, lambda g: g * mask))


def sigmoid(a):
    a = as_tensor(a)
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    return _make(y, (a, lambda g: g * y * (1.0 - y)))


def bce_with_logits(logits, targets):
    """Elementwise stable binary cross-entropy on raw logits."""
    a = as_tensor(logits)
    t = as_tensor(targets)
    x = a.data
    loss = np.maximum(x, 0) - x * t.data + np.log1p(np.exp(-np.abs(x)))
    def _dx(g):
        s = np.empty_like(x)
        pos = x >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        s[~pos] = ex / (1.0 + ex)
        return g * (s - t.data)
    return _make(loss, (a, _dx), (t, lambda g: _unbroadcast(-g * x, t.shape)))


# ---------------------------------------------------------------------------
# shape manipulation

def reshape(a, shape):
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a, lambda g: g.reshape(a.shape)))


def transpose(a, axes):
    a = as_tensor(a)
    inv = np.argsort(axes)
    return _make(np.transpose(a.data, axes),
                 (a, lambda g: np.transpose(g, inv)))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)
    def _slice_fn(i):
        def fn(g):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            return g[tuple(sl)]
        return fn
    data = np.concatenate([t.data for t in tensors], axis=axis)
    return _make(data, *[(t, _slice_fn(i)) for i, t in enumerate(tensors)])


def getitem(a, idx):
    a = as_tensor(a)
    def _bwd(g):
        out = np.zeros(a.shape, dtype=g.dtype)
        np.add.at(out, idx, g)
        return out
    return _make(a.data[idx], (a, _bwd))


# ---------------------------------------------------------------------------
# reductions

def _restore_axes(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape).copy() if np.isscalar(g) or g.ndim == 0 else np.full(shape, g)
    if not keepdims:
        axes = axis if isinstance(axis, tuple) else (axis,)
        for ax in sorted(a % len(shape) for a in axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    return _make(a.data.sum(axis=axis, keepdims=keepdims),
                 (a, lambda g: _restore_axes(g, a.shape, axis, keepdims) * np.ones(1, a.dtype)))


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    scale = out.size / a.size
    return _make(out,
                 (a, lambda g: _restore_axes(g, a.shape, axis, keepdims) * a.dtype.type(scale)))


# ---------------------------------------------------------------------------
# linear algebra and normalization

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    def _ga(g):
        return _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
    def _gb(g):
        return _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
    return _make(np.matmul(a.data, b.data), (a, _ga), (b, _gb))


def softmax(a, axis=-1):
    a = as_tensor(a)
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    def _bwd(g):
        return (g - (g * y).sum(axis=axis, keepdims=True)) * y
    return _make(y, (a, _bwd))


def layer_norm(a, gamma, beta, axis=-1, eps=1e-5):
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    a, gamma, beta = as_tensor(a), as_tensor(gamma), as_tensor(beta)
    x = a.data
    mu = x.mean(axis=axis, keepdims=True)
    var = x.var(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    n = x.shape[axis]

    def _dx(g):
        gx = g * gamma.data
        return inv * (gx - gx.mean(axis=axis, keepdims=True)
                      - xhat * (gx * xhat).mean(axis=axis, keepdims=True))

    def _dgamma(g):
        return _unbroadcast(g * xhat, gamma.shape)

    def _dbeta(g):
        return _unbroadcast(g, beta.shape)

    return _make(xhat * gamma.data + beta.data, (a, _dx), (gamma, _dgamma), (beta, _dbeta))


def conv2d(x, w, stride=1, pad=0):
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects NCHW and OIHW, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise DimensionError(f"conv2d channel mismatch: {x.shape} vs {w.shape}")
    y = kernels.conv2d_forward(x.data, w.data, stride, pad)
    cache = {}
    def _both(g):
        if "r" not in cache:
            cache["r"] = kernels.conv2d_backward(x.data, w.data, g, stride, pad)
        return cache["r"]
    return _make(y, (x, lambda g: _both(g)[0]), (w, lambda g: _both(g)[1]))


# ---------------------------------------------------------------------------
# structured blocks (compositions)

def apply_mask_filters(embeddings, features):
    """Per-query inner product of embeddings against pixel features.

    embeddings: (..., N, K); features: (..., K, H, W). Each embedding row
    acts as a 1x1 filter over the feature map, giving (..., N, H, W) logits.
    """
    embeddings, features = as_tensor(embeddings), as_tensor(features)
    if embeddings.shape[-1] != features.shape[-3]:
        raise DimensionError(
            f"embedding dim {embeddings.shape[-1]} != feature channels {features.shape[-3]}")
    k, h, w = features.shape[-3:]
    flat = reshape(features, features.shape[:-3] + (k, h * w))
    logits = matmul(embeddings, flat)
    return reshape(logits, logits.shape[:-1] + (h, w))


def linear(x, w, b=None):
    y = matmul(x, w)
    if b is not None:
        y = add(y, b)
    return y


def multi_head_attention(query, key, value, heads, wq, bq, wk, bk, wv, bv, wo, bo):
    """Scaled dot-product attention with internal q/k/v/out projections.

    query: (..., Q, K_dim); key/value: (..., S, K_dim). K_dim must divide
    evenly into `heads`; each head attends at scale 1/sqrt(head_dim).
    """
    query = as_tensor(query)
    kdim = query.shape[-1]
    if kdim % heads != 0:
        raise ConfigurationError(f"embedding dim {kdim} not divisible by {heads} heads")
    dh = kdim // heads

    def _split(t):
        # (..., L, K) -> (..., heads, L, dh)
        l = t.shape[-2]
        t = reshape(t, t.shape[:-1] + (heads, dh))
        nd = t.ndim
        perm = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
        return transpose(t, perm)

    q = _split(linear(query, wq, bq))
    k = _split(linear(key, wk, bk))
    v = _split(linear(value, wv, bv))

    scores = matmul(q, transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)))
    scores = mul(scores, 1.0 / math.sqrt(dh))
    att = softmax(scores, axis=-1)
    ctx = matmul(att, v)

    nd = ctx.ndim
    perm = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
    ctx = transpose(ctx, perm)
    ctx = reshape(ctx, ctx.shape[:-2] + (kdim,))
    return linear(ctx, wo, bo)
