"""Raster decode/encode, bilinear resize, and raster<->tensor conversion.

Rasters are 8-bit interleaved row-major buffers (1, 3, or 4 channels);
tensors are dense float32 arrays with an explicit layout tag. PNG and
JPEG are always supported; WebP encoding sits behind a feature flag.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import _kernels
from .errors import DecodeError, ShapeError

# Layouts accepted for image-shaped tensors. "n" dimensions are batch=1.
LAYOUTS = ("nchw", "chw", "hwc", "nhwc")


def webp_enabled() -> bool:
    return os.environ.get("IMGLIFT_WEBP", "0") not in ("0", "", "false")


@dataclass(frozen=True)
class ImageBuffer:
    """8-bit interleaved raster, shape (height, width, channels)."""

    data: np.ndarray

    def __post_init__(self):
        d = self.data
        if d.dtype != np.uint8 or d.ndim != 3:
            raise ShapeError(f"image buffer must be uint8 (H, W, C), got {d.dtype} {d.shape}")
        if d.shape[0] < 1 or d.shape[1] < 1:
            raise ShapeError(f"image dims must be >= 1, got {d.shape[1]}x{d.shape[0]}")
        if d.shape[2] not in (1, 3, 4):
            raise ShapeError(f"channels must be 1, 3 or 4, got {d.shape[2]}")
        if not d.flags.c_contiguous:
            object.__setattr__(self, "data", np.ascontiguousarray(d))
        self.data.setflags(write=False)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class Tensor:
    """Dense float32 array plus a layout tag describing its axes."""

    data: np.ndarray
    layout: str = "nchw"

    def __post_init__(self):
        if self.layout not in LAYOUTS:
            raise ShapeError(f"unknown layout {self.layout!r}")
        if self.data.ndim != len(self.layout):
            raise ShapeError(f"layout {self.layout!r} does not match rank {self.data.ndim}")
        if self.data.dtype != np.float32:
            object.__setattr__(self, "data", self.data.astype(np.float32))

    @property
    def shape(self) -> tuple:
        return tuple(self.data.shape)


_MODE_CHANNELS = {"L": 1, "RGB": 3, "RGBA": 4}


def decode(data: bytes, format_hint: str | None = None) -> ImageBuffer:
    """Decode PNG/JPEG (and WebP when Pillow supports it) bytes."""
    if not data:
        raise DecodeError("empty byte stream")
    try:
        with Image.open(io.BytesIO(data), formats=None) as im:
            if im.mode not in _MODE_CHANNELS:
                # Palette and exotic modes collapse to RGB(A); alpha survives.
                has_alpha = "A" in im.getbands() or (im.mode == "P" and "transparency" in im.info)
                im = im.convert("RGBA" if has_alpha else "RGB")
            im.load()
            arr = np.asarray(im, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DecodeError(f"cannot decode image: {exc}", magic=data[:8]) from exc
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return ImageBuffer(arr)


def encode(img: ImageBuffer, format: str = "png", quality: int = 85) -> bytes:
    """Encode to PNG (lossless), JPEG, or WebP behind the feature flag."""
    fmt = format.lower()
    if fmt == "jpg":
        fmt = "jpeg"
    if fmt == "webp" and not webp_enabled():
        raise ValueError("webp encoding disabled; set IMGLIFT_WEBP=1")
    if fmt not in ("png", "jpeg", "webp"):
        raise ValueError(f"unsupported format {format!r}")
    arr = img.data
    mode = {1: "L", 3: "RGB", 4: "RGBA"}[img.channels]
    if arr.shape[2] == 1:
        arr = arr[:, :, 0]
    pim = Image.fromarray(arr, mode=mode)
    if fmt == "jpeg" and mode == "RGBA":
        pim = pim.convert("RGB")
    buf = io.BytesIO()
    if fmt == "jpeg":
        pim.save(buf, format="JPEG", quality=quality)
    elif fmt == "webp":
        pim.save(buf, format="WEBP", quality=quality)
    else:
        pim.save(buf, format="PNG")
    return buf.getvalue()


def resize_bilinear(img: ImageBuffer, out_w: int, out_h: int) -> ImageBuffer:
    """Bilinear resize with half-pixel-center mapping and edge clamping.

    All channels (alpha included) are interpolated the same way.
    """
    if out_w < 1 or out_h < 1:
        raise ShapeError(f"target dims must be >= 1, got {out_w}x{out_h}")
    if out_w == img.width and out_h == img.height:
        return img
    return ImageBuffer(_kernels.resize_bilinear_u8(img.data, out_h, out_w))


def to_tensor(img: ImageBuffer, layout: str = "nchw", normalize: bool = True) -> Tensor:
    """Raster to float32 tensor; values divided by 255 when normalize."""
    arr = img.data.astype(np.float32)
    if normalize:
        arr /= np.float32(255.0)
    if layout == "hwc":
        pass
    elif layout == "chw":
        arr = arr.transpose(2, 0, 1)
    elif layout == "nchw":
        arr = arr.transpose(2, 0, 1)[None, ...]
    elif layout == "nhwc":
        arr = arr[None, ...]
    else:
        raise ShapeError(f"unknown layout {layout!r}")
    return Tensor(np.ascontiguousarray(arr), layout)


def from_tensor(t: Tensor) -> ImageBuffer:
    """Tensor (normalized [0,1]) back to uint8: clamp(round(x*255), 0, 255).

    Rounds half away from zero; NaN maps to 0. Batch size must be 1.
    """
    arr = t.data
    if t.layout == "nchw":
        if arr.shape[0] != 1:
            raise ShapeError(f"batch size must be 1, got {arr.shape[0]}")
        arr = arr[0].transpose(1, 2, 0)
    elif t.layout == "chw":
        arr = arr.transpose(1, 2, 0)
    elif t.layout == "nhwc":
        if arr.shape[0] != 1:
            raise ShapeError(f"batch size must be 1, got {arr.shape[0]}")
        arr = arr[0]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3, 4):
        raise ShapeError(f"tensor shape {t.shape} is not image-compatible")
    v = np.nan_to_num(arr.astype(np.float64), nan=0.0) * 255.0
    v = np.clip(np.floor(np.abs(v) + 0.5) * np.sign(v), 0.0, 255.0)
    return ImageBuffer(v.astype(np.uint8))
