"""Pure numpy implementations of the hot kernels.

Accumulation order in every float loop here mirrors the Cython core
(`_core.pyx`) exactly — offset-major for windowed filters, tap-major for
the separable blur — so the two backends agree bit-for-bit.
"""

import numpy as np


def _round_half_up_u8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(values + 0.5), 0.0, 255.0).astype(np.uint8)


def im2col_3x3(x: np.ndarray, pad: int):
    """Unfold (b, c, H, W) into (b, c*9, OH*OW) patch columns; zero padding."""
    b, c, h, w = x.shape
    if pad:
        xp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
        xp[:, :, pad:pad + h, pad:pad + w] = x
    else:
        xp = x
    oh, ow = xp.shape[2] - 2, xp.shape[3] - 2
    s0, s1, s2, s3 = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp, (b, c, 3, 3, oh, ow), (s0, s1, s2, s3, s2, s3))
    cols = np.ascontiguousarray(windows.reshape(b, c * 9, oh * ow))
    return cols, oh, ow


def maxpool2x2_forward(x: np.ndarray):
    """2x2 max pooling; returns output and the row-major window argmax (0..3)."""
    b, c, h, w = x.shape
    win = x.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = np.ascontiguousarray(win).reshape(b, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=4)  # numpy argmax takes the first occurrence
    y = np.take_along_axis(win, idx[..., None], axis=4)[..., 0]
    return y, idx.astype(np.uint8)


def maxpool2x2_backward(g: np.ndarray, idx: np.ndarray, shape):
    b, c, h, w = shape
    gw = np.zeros((b, c, h // 2, w // 2, 4), dtype=g.dtype)
    np.put_along_axis(gw, idx[..., None].astype(np.int64), g[..., None], axis=4)
    return gw.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)


def morph_dilate_u8(img: np.ndarray, radius: int) -> np.ndarray:
    """Windowed max over a square (2r+1) element, edge-replicated border."""
    h, w = img.shape
    padded = np.pad(img, radius, mode="edge")
    out = None
    for dy in range(2 * radius + 1):
        for dx in range(2 * radius + 1):
            view = padded[dy:dy + h, dx:dx + w]
            out = view.copy() if out is None else np.maximum(out, view)
    return out


def morph_erode_u8(img: np.ndarray, radius: int) -> np.ndarray:
    h, w = img.shape
    padded = np.pad(img, radius, mode="edge")
    out = None
    for dy in range(2 * radius + 1):
        for dx in range(2 * radius + 1):
            view = padded[dy:dy + h, dx:dx + w]
            out = view.copy() if out is None else np.minimum(out, view)
    return out


def bilateral_u8(img: np.ndarray, spatial_w: np.ndarray, range_lut: np.ndarray):
    """Edge-preserving smoothing of one uint8 channel.

    spatial_w is the (2r+1, 2r+1) Gaussian window, range_lut the 256-entry
    intensity-difference weight table.  Returns the rounded uint8 output
    and the per-pixel weight normalizer.
    """
    h, w = img.shape
    r = spatial_w.shape[0] // 2
    padded = np.pad(img, r, mode="edge")
    center = img.astype(np.int64)
    num = np.zeros((h, w), dtype=np.float64)
    den = np.zeros((h, w), dtype=np.float64)
    for dy in range(2 * r + 1):
        for dx in range(2 * r + 1):
            ws = spatial_w[dy, dx]
            neigh = padded[dy:dy + h, dx:dx + w]
            weight = ws * range_lut[np.abs(neigh.astype(np.int64) - center)]
            num += weight * neigh
            den += weight
    return _round_half_up_u8(num / den), den


def gaussian_blur_f64(img: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Separable blur of a uint8 channel; float64 result, replicated edges."""
    h, w = img.shape
    r = taps.size // 2
    src = img.astype(np.float64)

    padded = np.pad(src, ((0, 0), (r, r)), mode="edge")
    horizontal = np.zeros((h, w), dtype=np.float64)
    for t in range(taps.size):
        horizontal += taps[t] * padded[:, t:t + w]

    padded = np.pad(horizontal, ((r, r), (0, 0)), mode="edge")
    out = np.zeros((h, w), dtype=np.float64)
    for t in range(taps.size):
        out += taps[t] * padded[t:t + h, :]
    return out


def resize_bilinear_u8(img: np.ndarray, tw: int, th: int) -> np.ndarray:
    """Bilinear resize with half-pixel-centered sampling, rounded half-up."""
    h, w = img.shape
    ys = (np.arange(th, dtype=np.float64) + 0.5) * (h / th) - 0.5
    xs = (np.arange(tw, dtype=np.float64) + 0.5) * (w / tw) - 0.5
    y0 = np.floor(ys)
    x0 = np.floor(xs)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    y0i = np.clip(y0.astype(np.int64), 0, h - 1)
    y1i = np.clip(y0.astype(np.int64) + 1, 0, h - 1)
    x0i = np.clip(x0.astype(np.int64), 0, w - 1)
    x1i = np.clip(x0.astype(np.int64) + 1, 0, w - 1)
    src = img.astype(np.float64)
    top = (1.0 - fx) * src[y0i[:, None], x0i[None, :]] + fx * src[y0i[:, None], x1i[None, :]]
    bottom = (1.0 - fx) * src[y1i[:, None], x0i[None, :]] + fx * src[y1i[:, None], x1i[None, :]]
    return _round_half_up_u8((1.0 - fy) * top + fy * bottom)


def warp_affine_u8(img: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    """Inverse-map a uint8 channel through a 2x3 output->source affine matrix.

    Samples bilinearly at source index coordinates; anything landing outside
    [-0.5, extent-0.5] is filled with black.
    """
    h, w = img.shape
    xs = np.arange(w, dtype=np.float64)[None, :]
    ys = np.arange(h, dtype=np.float64)[:, None]
    sx = matrix[0, 0] * xs + matrix[0, 1] * ys + matrix[0, 2]
    sy = matrix[1, 0] * xs + matrix[1, 1] * ys + matrix[1, 2]
    inside = (sx >= -0.5) & (sx <= w - 0.5) & (sy >= -0.5) & (sy <= h - 0.5)
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    fx = sx - x0
    fy = sy - y0
    x0i = np.clip(x0.astype(np.int64), 0, w - 1)
    x1i = np.clip(x0.astype(np.int64) + 1, 0, w - 1)
    y0i = np.clip(y0.astype(np.int64), 0, h - 1)
    y1i = np.clip(y0.astype(np.int64) + 1, 0, h - 1)
    src = img.astype(np.float64)
    top = (1.0 - fx) * src[y0i, x0i] + fx * src[y0i, x1i]
    bottom = (1.0 - fx) * src[y1i, x0i] + fx * src[y1i, x1i]
    value = (1.0 - fy) * top + fy * bottom
    return np.where(inside, _round_half_up_u8(value), np.uint8(0))
