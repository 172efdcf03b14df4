# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: direct convolution and bilinear resampling.

Loop order keeps the innermost dimension contiguous so the C compiler can
vectorize; parallel regions split work along independent rows/filters, so
summation order per output element is fixed and runs are reproducible.
"""

import numpy as np

cimport cython
cimport numpy as cnp
from cython.parallel cimport prange

ctypedef fused floating:
    float
    double


def conv_out_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def _pad_input(x, int pad):
    if pad == 0:
        return np.ascontiguousarray(x)
    b, c, h, w = x.shape
    xp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
    xp[:, :, pad:pad + h, pad:pad + w] = x
    return xp


@cython.boundscheck(False)
cdef void _conv_fwd(floating[:, :, :, ::1] xp, floating[:, :, :, ::1] wt,
                    floating[:, :, :, ::1] yt, int stride) noexcept nogil:
    # xp: (B, Cin, HP, WP), wt: (Cin, KH, KW, Cout), yt: (B, OH, OW, Cout)
    cdef Py_ssize_t B = yt.shape[0], OH = yt.shape[1], OW = yt.shape[2], CO = yt.shape[3]
    cdef Py_ssize_t CI = wt.shape[0], KH = wt.shape[1], KW = wt.shape[2]
    cdef Py_ssize_t b, oy, ox, ci, ky, kx, co, iy, ix
    cdef floating xv
    cdef floating* yrow
    cdef floating* wrow
    for b in prange(B, schedule='static'):
        for oy in range(OH):
            for ox in range(OW):
                yrow = &yt[b, oy, ox, 0]
                for ci in range(CI):
                    for ky in range(KH):
                        iy = oy * stride + ky
                        for kx in range(KW):
                            ix = ox * stride + kx
                            xv = xp[b, ci, iy, ix]
                            wrow = &wt[ci, ky, kx, 0]
                            for co in range(CO):
                                yrow[co] += xv * wrow[co]


def conv2d_forward(x, w, int stride, int pad):
    b, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    oh = conv_out_size(h, kh, stride, pad)
    ow = conv_out_size(wd, kw, stride, pad)
    xp = _pad_input(x, pad)
    wt = np.ascontiguousarray(w.transpose(1, 2, 3, 0))
    yt = np.zeros((b, oh, ow, cout), dtype=x.dtype)
    if x.dtype == np.float32:
        _conv_fwd[float](xp, wt, yt, stride)
    else:
        _conv_fwd[double](xp, wt, yt, stride)
    return np.ascontiguousarray(yt.transpose(0, 3, 1, 2))


@cython.boundscheck(False)
cdef void _conv_bwd_x(floating[:, :, :, ::1] gyt, floating[:, :, :, ::1] wt,
                      floating[:, :, :, ::1] gxp, int stride) noexcept nogil:
    # gyt: (B, OH, OW, Cout), wt: (Cin, KH, KW, Cout), gxp: (B, Cin, HP, WP)
    # contiguous dot over Cout per scatter target
    cdef Py_ssize_t B = gyt.shape[0], OH = gyt.shape[1], OW = gyt.shape[2], CO = gyt.shape[3]
    cdef Py_ssize_t CI = wt.shape[0], KH = wt.shape[1], KW = wt.shape[2]
    cdef Py_ssize_t b, oy, ox, ci, ky, kx, co
    cdef floating s
    cdef floating* grow
    cdef floating* wrow
    for b in prange(B, schedule='static'):
        for oy in range(OH):
            for ox in range(OW):
                grow = &gyt[b, oy, ox, 0]
                for ci in range(CI):
                    for ky in range(KH):
                        for kx in range(KW):
                            wrow = &wt[ci, ky, kx, 0]
                            s = 0
                            for co in range(CO):
                                s = s + grow[co] * wrow[co]
                            gxp[b, ci, oy * stride + ky, ox * stride + kx] += s


@cython.boundscheck(False)
cdef void _conv_bwd_w(floating[:, :, :, ::1] gyt, floating[:, :, :, ::1] xp,
                      floating[:, :, :, ::1] gwt, int stride) noexcept nogil:
    # gwt: (Cin, KH, KW, Cout) accumulator stays cache-resident; rank-1
    # updates along the contiguous Cout axis
    cdef Py_ssize_t B = gyt.shape[0], OH = gyt.shape[1], OW = gyt.shape[2], CO = gyt.shape[3]
    cdef Py_ssize_t CI = gwt.shape[0], KH = gwt.shape[1], KW = gwt.shape[2]
    cdef Py_ssize_t b, oy, ox, ci, ky, kx, co, iy, ix
    cdef floating xv
    cdef floating* grow
    cdef floating* wrow
    for b in range(B):
        for oy in range(OH):
            for ox in range(OW):
                grow = &gyt[b, oy, ox, 0]
                for ci in range(CI):
                    for ky in range(KH):
                        iy = oy * stride + ky
                        for kx in range(KW):
                            ix = ox * stride + kx
                            xv = xp[b, ci, iy, ix]
                            wrow = &gwt[ci, ky, kx, 0]
                            for co in range(CO):
                                wrow[co] += xv * grow[co]


def conv2d_backward(x, w, gy, int stride, int pad):
    b, cin, h, wd = x.shape
    cout = w.shape[0]
    xp = _pad_input(x, pad)
    wt = np.ascontiguousarray(w.transpose(1, 2, 3, 0))
    gyt = np.ascontiguousarray(gy.transpose(0, 2, 3, 1))
    gxp = np.zeros_like(xp)
    gwt = np.zeros_like(wt)
    if x.dtype == np.float32:
        _conv_bwd_x[float](gyt, wt, gxp, stride)
        _conv_bwd_w[float](gyt, xp, gwt, stride)
    else:
        _conv_bwd_x[double](gyt, wt, gxp, stride)
        _conv_bwd_w[double](gyt, xp, gwt, stride)
    gx = gxp[:, :, pad:pad + h, pad:pad + wd] if pad else gxp
    gw = np.ascontiguousarray(gwt.transpose(3, 0, 1, 2))
    return np.ascontiguousarray(gx), gw


cdef inline double _src_step(Py_ssize_t src_len, Py_ssize_t dst_len) noexcept nogil:
    if dst_len <= 1:
        return 0.0
    return (src_len - 1.0) / (dst_len - 1.0)


@cython.boundscheck(False)
cdef void _bilinear(floating[:, :, ::1] src, floating[:, :, ::1] dst) noexcept nogil:
    cdef Py_ssize_t C = src.shape[0], H = src.shape[1], W = src.shape[2]
    cdef Py_ssize_t OH = dst.shape[1], OW = dst.shape[2]
    cdef double sy = _src_step(H, OH), sx = _src_step(W, OW)
    cdef Py_ssize_t c, oy, ox, y0, x0, y1, x1
    cdef double yf, xf, fy, fx, top, bot
    for oy in prange(OH, schedule='static'):
        yf = oy * sy
        y0 = <Py_ssize_t>yf
        if y0 > H - 2:
            y0 = H - 2
        if y0 < 0:
            y0 = 0
        y1 = y0 + 1
        if y1 > H - 1:
            y1 = H - 1
        fy = yf - y0
        for ox in range(OW):
            xf = ox * sx
            x0 = <Py_ssize_t>xf
            if x0 > W - 2:
                x0 = W - 2
            if x0 < 0:
                x0 = 0
            x1 = x0 + 1
            if x1 > W - 1:
                x1 = W - 1
            fx = xf - x0
            for c in range(C):
                top = src[c, y0, x0] + (src[c, y0, x1] - src[c, y0, x0]) * fx
                bot = src[c, y1, x0] + (src[c, y1, x1] - src[c, y1, x0]) * fx
                dst[c, oy, ox] = <floating>(top + (bot - top) * fy)


def bilinear_resize(src, oh, ow):
    c, h, w = src.shape
    if oh == h and ow == w:
        return src.copy()
    src = np.ascontiguousarray(src)
    dst = np.zeros((c, oh, ow), dtype=src.dtype)
    if src.dtype == np.float32:
        _bilinear[float](src, dst)
    else:
        _bilinear[double](src, dst)
    return dst


@cython.boundscheck(False)
cdef void _accumulate(double[:, :, ::1] acc, cnp.int32_t[:, ::1] cnt,
                      floating[:, :, ::1] probs,
                      Py_ssize_t x0, Py_ssize_t y0, Py_ssize_t x1, Py_ssize_t y1) noexcept nogil:
    cdef Py_ssize_t N = probs.shape[0], H = probs.shape[1], W = probs.shape[2]
    cdef Py_ssize_t RH = y1 - y0, RW = x1 - x0
    cdef double sv = _src_step(H, RH), su = _src_step(W, RW)
    cdef Py_ssize_t ry, rx, n, v0, u0, v1, u1
    cdef double vf, uf, fv, fu, top, bot
    for ry in prange(RH, schedule='static'):
        vf = ry * sv
        v0 = <Py_ssize_t>vf
        if v0 > H - 2:
            v0 = H - 2
        if v0 < 0:
            v0 = 0
        v1 = v0 + 1
        if v1 > H - 1:
            v1 = H - 1
        fv = vf - v0
        for rx in range(RW):
            uf = rx * su
            u0 = <Py_ssize_t>uf
            if u0 > W - 2:
                u0 = W - 2
            if u0 < 0:
                u0 = 0
            u1 = u0 + 1
            if u1 > W - 1:
                u1 = W - 1
            fu = uf - u0
            cnt[y0 + ry, x0 + rx] += 1
            for n in range(N):
                top = probs[n, v0, u0] + (probs[n, v0, u1] - probs[n, v0, u0]) * fu
                bot = probs[n, v1, u0] + (probs[n, v1, u1] - probs[n, v1, u0]) * fu
                # round to the input dtype first so short sums stay exact
                acc[n, y0 + ry, x0 + rx] += <floating>(top + (bot - top) * fv)


def bilinear_accumulate(acc, cnt, probs, x0, y0, x1, y1):
    probs = np.ascontiguousarray(probs)
    if probs.dtype == np.float32:
        _accumulate[float](acc, cnt, probs, x0, y0, x1, y1)
    else:
        _accumulate[double](acc, cnt, probs, x0, y0, x1, y1)
