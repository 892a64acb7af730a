"""Hot-kernel dispatch: compiled Cython core with numpy fallback.

The backend is chosen once at import time. IMGLIFT_KERNELS controls it:
"auto" (default, prefer compiled), "fallback"/"numpy" (force numpy),
"cython" (require the compiled core, raise if missing).
"""

import os

import numpy as np

from . import fallback

try:
    from . import _core
except ImportError:
    _core = None

_mode = os.environ.get("IMGLIFT_KERNELS", "auto").lower()
if _mode in ("fallback", "numpy"):
    _impl = fallback
elif _mode == "cython":
    if _core is None:
        raise ImportError("IMGLIFT_KERNELS=cython but the compiled core is not built")
    _impl = _core
else:
    _impl = _core if _core is not None else fallback

BACKEND = "cython" if _impl is _core else "numpy"


def available_backends() -> dict:
    """Name -> raw kernel module, for parity tests and benchmarks."""
    out = {"numpy": fallback}
    if _core is not None:
        out["cython"] = _core
    return out


def conv2d_same(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float32)
    w = np.ascontiguousarray(w, dtype=np.float32)
    b = np.ascontiguousarray(b, dtype=np.float32)
    return _impl.conv2d_same(x, w, b)


def pixel_shuffle(x: np.ndarray, r: int) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float32)
    return _impl.pixel_shuffle(x, r)


def resize_bilinear_u8(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    src = np.ascontiguousarray(src, dtype=np.uint8)
    return _impl.resize_bilinear_u8(src, out_h, out_w)
