# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: same-padded conv2d, pixel shuffle, bilinear resize.

Numerics must stay in lockstep with fallback.py: conv2d accumulates in
float64 (float32 products are exact in double), bilinear interpolation
uses the same lerp expression order in float64.
"""

from libc.math cimport floor

import numpy as np


def conv2d_same(const float[:, :, ::1] x, const float[:, :, :, ::1] w,
                const float[::1] b):
    cdef Py_ssize_t ci = x.shape[0], h = x.shape[1], wd = x.shape[2]
    cdef Py_ssize_t o = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t pt = kh // 2, pl = kw // 2
    acc_np = np.empty((o, h, wd), dtype=np.float64)
    cdef double[:, :, ::1] acc = acc_np
    cdef Py_ssize_t oc, ic, ky, kx, y, xx, ylo, yhi, xlo, xhi, dy, dx
    cdef double wv

    for oc in range(o):
        for y in range(h):
            for xx in range(wd):
                acc[oc, y, xx] = b[oc]

    for oc in range(o):
        for ic in range(ci):
            for ky in range(kh):
                dy = ky - pt
                ylo = -dy if dy < 0 else 0
                yhi = h if dy <= 0 else h - dy
                for kx in range(kw):
                    wv = w[oc, ic, ky, kx]
                    if wv == 0.0:
                        continue
                    dx = kx - pl
                    xlo = -dx if dx < 0 else 0
                    xhi = wd if dx <= 0 else wd - dx
                    for y in range(ylo, yhi):
                        for xx in range(xlo, xhi):
                            acc[oc, y, xx] += wv * x[ic, y + dy, xx + dx]
    return acc_np.astype(np.float32)


def pixel_shuffle(const float[:, :, ::1] x, Py_ssize_t r):
    cdef Py_ssize_t c = x.shape[0], h = x.shape[1], w = x.shape[2]
    cdef Py_ssize_t co = c // (r * r)
    out_np = np.empty((co, h * r, w * r), dtype=np.float32)
    cdef float[:, :, ::1] out = out_np
    cdef Py_ssize_t cc, yy, xx, dy, dx
    for cc in range(co):
        for dy in range(r):
            for dx in range(r):
                for yy in range(h):
                    for xx in range(w):
                        out[cc, yy * r + dy, xx * r + dx] = x[cc * r * r + dy * r + dx, yy, xx]
    return out_np


def resize_bilinear_u8(const unsigned char[:, :, ::1] src,
                       Py_ssize_t out_h, Py_ssize_t out_w):
    cdef Py_ssize_t h = src.shape[0], w = src.shape[1], c = src.shape[2]
    out_np = np.empty((out_h, out_w, c), dtype=np.uint8)
    cdef unsigned char[:, :, ::1] out = out_np
    cdef double sy = <double> h / out_h, sx = <double> w / out_w
    cdef Py_ssize_t y, x, ch, y0, y1, x0, x1
    cdef double fy, fx, ty, tx, p00, p01, p10, p11, top, bot, v

    for y in range(out_h):
        fy = (y + 0.5) * sy - 0.5
        if fy < 0.0:
            fy = 0.0
        elif fy > h - 1.0:
            fy = h - 1.0
        y0 = <Py_ssize_t> floor(fy)
        ty = fy - y0
        y1 = y0 + 1 if y0 + 1 < h else h - 1
        for x in range(out_w):
            fx = (x + 0.5) * sx - 0.5
            if fx < 0.0:
                fx = 0.0
            elif fx > w - 1.0:
                fx = w - 1.0
            x0 = <Py_ssize_t> floor(fx)
            tx = fx - x0
            x1 = x0 + 1 if x0 + 1 < w else w - 1
            for ch in range(c):
                p00 = src[y0, x0, ch]
                p01 = src[y0, x1, ch]
                p10 = src[y1, x0, ch]
                p11 = src[y1, x1, ch]
                top = p00 + tx * (p01 - p00)
                bot = p10 + tx * (p11 - p10)
                v = top + ty * (bot - top)
                out[y, x, ch] = <unsigned char> floor(v + 0.5)
    return out_np
