"""Numpy implementations of the hot kernels.

This is the fallback backend used when the compiled extension is not
available (or when MVSEG_KERNELS=numpy). Convolution goes through a
strided im2col view plus one BLAS matmul; the geometry kernels are
vectorized gathers. Semantics must match `_native` exactly up to
floating-point summation order.
"""

import numpy as np


def _pad_input(x, pad):
    if pad == 0:
        return x
    b, c, h, w = x.shape
    xp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
    xp[:, :, pad:pad + h, pad:pad + w] = x
    return xp


def _col_view(xp, kh, kw, stride, oh, ow):
    # (B, OH, OW, C, KH, KW) zero-copy window view of the padded input
    b, c = xp.shape[:2]
    sb, sc, sh, sw = xp.strides
    shape = (b, oh, ow, c, kh, kw)
    strides = (sb, sh * stride, sw * stride, sc, sh, sw)
    return np.lib.stride_tricks.as_strided(xp, shape, strides)


def conv_out_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def conv2d_forward(x, w, stride, pad):
    b, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    oh = conv_out_size(h, kh, stride, pad)
    ow = conv_out_size(wd, kw, stride, pad)
    xp = _pad_input(x, pad)
    cols = _col_view(xp, kh, kw, stride, oh, ow).reshape(b * oh * ow, cin * kh * kw)
    y = cols @ w.reshape(cout, -1).T
    return np.ascontiguousarray(y.reshape(b, oh, ow, cout).transpose(0, 3, 1, 2))


def conv2d_backward(x, w, gy, stride, pad):
    b, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    _, _, oh, ow = gy.shape
    xp = _pad_input(x, pad)
    cols = _col_view(xp, kh, kw, stride, oh, ow).reshape(b * oh * ow, cin * kh * kw)
    gy_mat = gy.transpose(0, 2, 3, 1).reshape(b * oh * ow, cout)

    gw = (gy_mat.T @ cols).reshape(cout, cin, kh, kw)

    gcols = (gy_mat @ w.reshape(cout, -1)).reshape(b, oh, ow, cin, kh, kw)
    gxp = np.zeros_like(xp)
    for ky in range(kh):
        for kx in range(kw):
            gxp[:, :, ky:ky + stride * oh:stride, kx:kx + stride * ow:stride] += \
                gcols[:, :, :, :, ky, kx].transpose(0, 3, 1, 2)
    gx = gxp[:, :, pad:pad + h, pad:pad + wd] if pad else gxp
    return np.ascontiguousarray(gx), gw


def _axis_coords(src_len, dst_len, dtype):
    # corner-aligned: dst index i samples source coordinate i*(S-1)/(D-1)
    if dst_len == 1:
        return np.zeros(1, dtype=dtype)
    return np.arange(dst_len, dtype=dtype) * ((src_len - 1) / (dst_len - 1))


def bilinear_resize(src, oh, ow):
    """Resize (C, H, W) with corner-aligned bilinear sampling."""
    c, h, w = src.shape
    if oh == h and ow == w:
        return src.copy()
    ys = _axis_coords(h, oh, np.float64)
    xs = _axis_coords(w, ow, np.float64)
    y0 = np.minimum(ys.astype(np.int64), h - 2) if h > 1 else np.zeros(oh, np.int64)
    x0 = np.minimum(xs.astype(np.int64), w - 2) if w > 1 else np.zeros(ow, np.int64)
    fy = (ys - y0).astype(src.dtype) if h > 1 else np.zeros(oh, src.dtype)
    fx = (xs - x0).astype(src.dtype) if w > 1 else np.zeros(ow, src.dtype)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)

    fy = fy[None, :, None]
    fx = fx[None, None, :]
    a = src[:, y0[:, None], x0[None, :]]
    b = src[:, y0[:, None], x1[None, :]]
    c_ = src[:, y1[:, None], x0[None, :]]
    d = src[:, y1[:, None], x1[None, :]]
    top = a + (b - a) * fx
    bot = c_ + (d - c_) * fx
    return (top + (bot - top) * fy).astype(src.dtype, copy=False)


def bilinear_accumulate(acc, cnt, probs, x0, y0, x1, y1):
    """Back-map per-query maps onto a crop rectangle of a full-size canvas.

    acc: (N, FH, FW) float64, += bilinearly resampled `probs`
    cnt: (FH, FW) int32, += 1 on the rectangle
    probs: (N, h, w) float32/float64 in the view frame
    """
    n, h, w = probs.shape
    rh, rw = y1 - y0, x1 - x0
    vs = _axis_coords(h, rh, np.float64)
    us = _axis_coords(w, rw, np.float64)
    v0 = np.minimum(vs.astype(np.int64), h - 2) if h > 1 else np.zeros(rh, np.int64)
    u0 = np.minimum(us.astype(np.int64), w - 2) if w > 1 else np.zeros(rw, np.int64)
    fv = (vs - v0)[None, :, None]
    fu = (us - u0)[None, None, :]
    v1 = np.minimum(v0 + 1, h - 1)
    u1 = np.minimum(u0 + 1, w - 1)

    p = probs.astype(np.float64, copy=False)
    a = p[:, v0[:, None], u0[None, :]]
    b = p[:, v0[:, None], u1[None, :]]
    c = p[:, v1[:, None], u0[None, :]]
    d = p[:, v1[:, None], u1[None, :]]
    top = a + (b - a) * fu
    bot = c + (d - c) * fu
    # round to the input dtype before accumulating: sums of a few such
    # values are exact in float64, so averaging identical maps is bit-exact
    vals = (top + (bot - top) * fv).astype(probs.dtype)
    acc[:, y0:y1, x0:x1] += vals
    cnt[y0:y1, x0:x1] += 1
