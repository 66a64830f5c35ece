"""Hot numeric kernels with a compiled core and a numpy fallback.

The Cython extension `_core` is built at install time; when it is missing
(no compiler, source checkout) the numpy implementations in `_fallback`
take over.  Both backends are written with identical floating-point
accumulation order, so every consumer — golden image tests included —
gets bit-identical results regardless of which one is active.

Set DISTILLFORGE_BACKEND=numpy (or =cython) to force a backend.
"""

import importlib
import os

from . import _fallback

_requested = os.environ.get("DISTILLFORGE_BACKEND", "auto").lower()

_core = None
if _requested in ("auto", "cython"):
    try:
        _core = importlib.import_module("._core", __package__)
    except ImportError:
        if _requested == "cython":
            raise ImportError(
                "DISTILLFORGE_BACKEND=cython but the compiled extension is not available")

_impl = _core if _core is not None else _fallback

BACKEND = "cython" if _core is not None else "numpy"

im2col_3x3 = _impl.im2col_3x3
maxpool2x2_forward = _impl.maxpool2x2_forward
maxpool2x2_backward = _impl.maxpool2x2_backward
morph_dilate_u8 = _impl.morph_dilate_u8
morph_erode_u8 = _impl.morph_erode_u8
bilateral_u8 = _impl.bilateral_u8
gaussian_blur_f64 = _impl.gaussian_blur_f64
resize_bilinear_u8 = _impl.resize_bilinear_u8
warp_affine_u8 = _impl.warp_affine_u8

__all__ = [
    "BACKEND",
    "im2col_3x3",
    "maxpool2x2_forward",
    "maxpool2x2_backward",
    "morph_dilate_u8",
    "morph_erode_u8",
    "bilateral_u8",
    "gaussian_blur_f64",
    "resize_bilinear_u8",
    "warp_affine_u8",
]
