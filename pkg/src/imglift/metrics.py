"""MSE, PSNR, and SSIM between a reference image and an upscaled image.

SSIM follows the canonical windowed form with population (weighted)
moments; the default window is 8x8 uniform, with 11x11 Gaussian
sigma=1.5 selectable. Color inputs are reduced to Rec.601 luma.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError, WindowError
from .image import ImageBuffer

DYNAMIC_RANGE = 255.0


@dataclass(frozen=True)
class SsimParams:
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = DYNAMIC_RANGE
    window: str = "uniform"  # "uniform" (8x8) or "gaussian" (11x11, sigma 1.5)
    window_size: int = 0  # 0 = default for the window kind
    sigma: float = 1.5

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2

    def kernel_1d(self) -> np.ndarray:
        """Separable window weights; the outer product sums to 1."""
        if self.window == "uniform":
            n = self.window_size or 8
            return np.full(n, 1.0 / n)
        if self.window == "gaussian":
            n = self.window_size or 11
            if n % 2 == 0:
                raise ValueError("gaussian window size must be odd")
            r = n // 2
            xs = np.arange(-r, r + 1, dtype=np.float64)
            g = np.exp(-0.5 * (xs / self.sigma) ** 2)
            return g / g.sum()
        raise ValueError(f"unknown window kind {self.window!r}")


@dataclass(frozen=True)
class QualityScore:
    mse: float
    psnr: float  # math.inf when mse == 0
    ssim: float

    def as_dict(self) -> dict:
        """JSON-safe dict; infinite psnr serializes as the string "inf"."""
        p = "inf" if math.isinf(self.psnr) else self.psnr
        return {"mse": self.mse, "psnr": p, "ssim": self.ssim}


def _plane(img) -> np.ndarray:
    arr = img.data if isinstance(img, ImageBuffer) else np.asarray(img)
    return arr.astype(np.float64)


def _check_dims(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ShapeError(f"image dims differ: {a.shape} vs {b.shape}")


def mse(a, b) -> float:
    """Mean over all samples of the squared difference."""
    pa, pb = _plane(a), _plane(b)
    _check_dims(pa, pb)
    return float(np.mean((pa - pb) ** 2))


def psnr(a, b) -> float:
    """10*log10(L^2 / MSE), L=255; +inf when the images are identical."""
    m = mse(a, b)
    if m == 0.0:
        return math.inf
    return 10.0 * math.log10(DYNAMIC_RANGE * DYNAMIC_RANGE / m)


def luma(arr: np.ndarray) -> np.ndarray:
    """Rec.601 Y = 0.299R + 0.587G + 0.114B; alpha is ignored."""
    if arr.ndim == 2:
        return arr
    if arr.shape[2] == 1:
        return arr[:, :, 0]
    return 0.299 * arr[:, :, 0] + 0.587 * arr[:, :, 1] + 0.114 * arr[:, :, 2]


def _sep_filter(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Valid-mode separable 2D filtering (rows then columns)."""
    t = sliding_window_view(img, len(k), axis=0) @ k
    return sliding_window_view(t, len(k), axis=1) @ k


def _ssim_plane(a: np.ndarray, b: np.ndarray, params: SsimParams) -> float:
    k = params.kernel_1d()
    n = len(k)
    if a.shape[0] < n or a.shape[1] < n:
        raise WindowError(f"image {a.shape[1]}x{a.shape[0]} smaller than {n}x{n} window")
    c1, c2 = params.c1, params.c2
    mu_a = _sep_filter(a, k)
    mu_b = _sep_filter(b, k)
    # population moments: sigma^2 = E[x^2] - mu^2
    var_a = _sep_filter(a * a, k) - mu_a * mu_a
    var_b = _sep_filter(b * b, k) - mu_b * mu_b
    cov = _sep_filter(a * b, k) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a, b, params: SsimParams | None = None, channelwise: bool = False) -> float:
    """Mean structural similarity over sliding windows.

    Color inputs are compared on Rec.601 luma unless channelwise is set,
    in which case the per-channel scores are averaged.
    """
    params = params or SsimParams()
    pa, pb = _plane(a), _plane(b)
    _check_dims(pa, pb)
    if channelwise and pa.ndim == 3 and pa.shape[2] > 1:
        ch = min(pa.shape[2], 3)  # alpha excluded
        return float(np.mean([_ssim_plane(pa[:, :, i], pb[:, :, i], params) for i in range(ch)]))
    return _ssim_plane(luma(pa), luma(pb), params)


def score(reference, candidate, params: SsimParams | None = None) -> QualityScore:
    return QualityScore(
        mse=mse(reference, candidate),
        psnr=psnr(reference, candidate),
        ssim=ssim(reference, candidate, params),
    )
