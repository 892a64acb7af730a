"""Numpy implementations of the hot kernels.

Used when the compiled core is unavailable (or forced via
IMGLIFT_KERNELS=fallback). Arithmetic matches the compiled core:
conv2d accumulates in float64, bilinear interpolation runs in float64
with the same expression order, so both backends produce identical
results.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv2d_same(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Stride-1 zero-padded convolution, output anchored at floor(k/2).

    x: (C, H, W) float32, w: (O, C, KH, KW) float32, b: (O,) float32.
    Returns (O, H, W) float32.
    """
    _, h, wd = x.shape
    kh, kw = w.shape[2], w.shape[3]
    pt, pl = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (pt, kh - 1 - pt), (pl, kw - 1 - pl))).astype(np.float64)
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # (C, H, W, KH, KW)
    out = np.tensordot(w.astype(np.float64), win, axes=([1, 2, 3], [0, 3, 4]))
    out += b.astype(np.float64)[:, None, None]
    return out.astype(np.float32)


def pixel_shuffle(x: np.ndarray, r: int) -> np.ndarray:
    """(C*r^2, H, W) -> (C, r*H, r*W); out[c, rY+dy, rX+dx] = x[c*r^2 + dy*r + dx, Y, X]."""
    c, h, w = x.shape
    co = c // (r * r)
    out = x.reshape(co, r, r, h, w).transpose(0, 3, 1, 4, 2).reshape(co, h * r, w * r)
    return np.ascontiguousarray(out)


def resize_bilinear_u8(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of a (H, W, C) uint8 raster to (out_h, out_w, C).

    Half-pixel-center mapping src = (dst + 0.5) * scale - 0.5 with edge
    clamping; denormalization rounds half away from zero.
    """
    h, w, _ = src.shape
    fy = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1.0)
    fx = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(fy).astype(np.intp)
    x0 = np.floor(fx).astype(np.intp)
    ty = (fy - y0)[:, None, None]
    tx = (fx - x0)[None, :, None]
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)

    s = src.astype(np.float64)
    p00 = s[y0[:, None], x0[None, :]]
    p01 = s[y0[:, None], x1[None, :]]
    p10 = s[y1[:, None], x0[None, :]]
    p11 = s[y1[:, None], x1[None, :]]
    top = p00 + tx * (p01 - p00)
    bot = p10 + tx * (p11 - p10)
    v = top + ty * (bot - top)
    return np.floor(v + 0.5).astype(np.uint8)
