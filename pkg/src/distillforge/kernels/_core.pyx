# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the numpy fallback kernels.

Every float loop keeps the exact accumulation order of `_fallback.py`
(offset-major windows, tap-major blur, identical bilinear expression
trees); the build disables FMA contraction, so both backends return
bit-identical arrays.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()

ctypedef fused floating:
    float
    double


cdef inline unsigned char _round_u8(double value) nogil:
    cdef double r = floor(value + 0.5)
    if r < 0.0:
        r = 0.0
    elif r > 255.0:
        r = 255.0
    return <unsigned char> r


cdef inline Py_ssize_t _clamp(Py_ssize_t i, Py_ssize_t n) nogil:
    if i < 0:
        return 0
    if i >= n:
        return n - 1
    return i


def im2col_3x3(floating[:, :, :, ::1] x, int pad):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = h + 2 * pad - 2, ow = w + 2 * pad - 2
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.zeros((b, c * 9, oh * ow), dtype=dtype)
    cdef floating[:, :, ::1] out = out_arr
    cdef Py_ssize_t bi, ci, u, v, i, j, si, sj, row
    with nogil:
        for bi in range(b):
            for ci in range(c):
                for u in range(3):
                    for v in range(3):
                        row = ci * 9 + u * 3 + v
                        for i in range(oh):
                            si = i + u - pad
                            if si < 0 or si >= h:
                                continue
                            for j in range(ow):
                                sj = j + v - pad
                                if sj < 0 or sj >= w:
                                    continue
                                out[bi, row, i * ow + j] = x[bi, ci, si, sj]
    return out_arr, oh, ow


def maxpool2x2_forward(floating[:, :, :, ::1] x):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t h2 = h // 2, w2 = w // 2
    dtype = np.float32 if floating is float else np.float64
    y_arr = np.empty((b, c, h2, w2), dtype=dtype)
    idx_arr = np.empty((b, c, h2, w2), dtype=np.uint8)
    cdef floating[:, :, :, ::1] y = y_arr
    cdef unsigned char[:, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t bi, ci, i, j, k, dy, dx
    cdef floating best, cand
    cdef unsigned char best_k
    with nogil:
        for bi in range(b):
            for ci in range(c):
                for i in range(h2):
                    for j in range(w2):
                        best = x[bi, ci, 2 * i, 2 * j]
                        best_k = 0
                        for k in range(1, 4):
                            dy = k >> 1
                            dx = k & 1
                            cand = x[bi, ci, 2 * i + dy, 2 * j + dx]
                            if cand > best:  # strict: keep first occurrence
                                best = cand
                                best_k = <unsigned char> k
                        y[bi, ci, i, j] = best
                        idx[bi, ci, i, j] = best_k
    return y_arr, idx_arr


def maxpool2x2_backward(floating[:, :, :, ::1] g, unsigned char[:, :, :, ::1] idx, shape):
    cdef Py_ssize_t b = shape[0], c = shape[1], h = shape[2], w = shape[3]
    dtype = np.float32 if floating is float else np.float64
    gx_arr = np.zeros((b, c, h, w), dtype=dtype)
    cdef floating[:, :, :, ::1] gx = gx_arr
    cdef Py_ssize_t bi, ci, i, j
    cdef unsigned char k
    with nogil:
        for bi in range(b):
            for ci in range(c):
                for i in range(h // 2):
                    for j in range(w // 2):
                        k = idx[bi, ci, i, j]
                        gx[bi, ci, 2 * i + (k >> 1), 2 * j + (k & 1)] = g[bi, ci, i, j]
    return gx_arr


def morph_dilate_u8(const unsigned char[:, ::1] img, int radius):
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    out_arr = np.empty((h, w), dtype=np.uint8)
    cdef unsigned char[:, ::1] out = out_arr
    cdef Py_ssize_t y, x, dy, dx
    cdef unsigned char best, v
    with nogil:
        for y in range(h):
            for x in range(w):
                best = 0
                for dy in range(-radius, radius + 1):
                    for dx in range(-radius, radius + 1):
                        v = img[_clamp(y + dy, h), _clamp(x + dx, w)]
                        if v > best:
                            best = v
                out[y, x] = best
    return out_arr


def morph_erode_u8(const unsigned char[:, ::1] img, int radius):
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    out_arr = np.empty((h, w), dtype=np.uint8)
    cdef unsigned char[:, ::1] out = out_arr
    cdef Py_ssize_t y, x, dy, dx
    cdef unsigned char best, v
    with nogil:
        for y in range(h):
            for x in range(w):
                best = 255
                for dy in range(-radius, radius + 1):
                    for dx in range(-radius, radius + 1):
                        v = img[_clamp(y + dy, h), _clamp(x + dx, w)]
                        if v < best:
                            best = v
                out[y, x] = best
    return out_arr


def bilateral_u8(const unsigned char[:, ::1] img, const double[:, ::1] spatial_w,
                 const double[::1] range_lut):
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    cdef Py_ssize_t r = spatial_w.shape[0] // 2
    out_arr = np.empty((h, w), dtype=np.uint8)
    den_arr = np.empty((h, w), dtype=np.float64)
    cdef unsigned char[:, ::1] out = out_arr
    cdef double[:, ::1] den_out = den_arr
    cdef Py_ssize_t y, x, dy, dx
    cdef int center, diff
    cdef unsigned char v
    cdef double num, den, wgt
    with nogil:
        for y in range(h):
            for x in range(w):
                center = img[y, x]
                num = 0.0
                den = 0.0
                for dy in range(2 * r + 1):
                    for dx in range(2 * r + 1):
                        v = img[_clamp(y + dy - r, h), _clamp(x + dx - r, w)]
                        diff = v - center
                        if diff < 0:
                            diff = -diff
                        wgt = spatial_w[dy, dx] * range_lut[diff]
                        num += wgt * v
                        den += wgt
                out[y, x] = _round_u8(num / den)
                den_out[y, x] = den
    return out_arr, den_arr


def gaussian_blur_f64(const unsigned char[:, ::1] img, const double[::1] taps):
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    cdef Py_ssize_t n = taps.shape[0], r = n // 2
    horiz_arr = np.zeros((h, w), dtype=np.float64)
    out_arr = np.zeros((h, w), dtype=np.float64)
    cdef double[:, ::1] horiz = horiz_arr
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t y, x, t
    cdef double acc
    with nogil:
        for y in range(h):
            for x in range(w):
                acc = 0.0
                for t in range(n):
                    acc += taps[t] * <double> img[y, _clamp(x + t - r, w)]
                horiz[y, x] = acc
        for y in range(h):
            for x in range(w):
                acc = 0.0
                for t in range(n):
                    acc += taps[t] * horiz[_clamp(y + t - r, h), x]
                out[y, x] = acc
    return out_arr


def resize_bilinear_u8(const unsigned char[:, ::1] img, Py_ssize_t tw, Py_ssize_t th):
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    out_arr = np.empty((th, tw), dtype=np.uint8)
    cdef unsigned char[:, ::1] out = out_arr
    cdef double sy_scale = <double> h / th
    cdef double sx_scale = <double> w / tw
    cdef Py_ssize_t i, j, y0i, y1i, x0i, x1i
    cdef double sy, sx, fy, fx, top, bottom
    with nogil:
        for i in range(th):
            sy = (i + 0.5) * sy_scale - 0.5
            y0i = <Py_ssize_t> floor(sy)
            fy = sy - floor(sy)
            y1i = _clamp(y0i + 1, h)
            y0i = _clamp(y0i, h)
            for j in range(tw):
                sx = (j + 0.5) * sx_scale - 0.5
                x0i = <Py_ssize_t> floor(sx)
                fx = sx - floor(sx)
                x1i = _clamp(x0i + 1, w)
                x0i = _clamp(x0i, w)
                top = (1.0 - fx) * img[y0i, x0i] + fx * img[y0i, x1i]
                bottom = (1.0 - fx) * img[y1i, x0i] + fx * img[y1i, x1i]
                out[i, j] = _round_u8((1.0 - fy) * top + fy * bottom)
    return out_arr


def warp_affine_u8(const unsigned char[:, ::1] img, const double[:, ::1] matrix):
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    out_arr = np.empty((h, w), dtype=np.uint8)
    cdef unsigned char[:, ::1] out = out_arr
    cdef double m00 = matrix[0, 0], m01 = matrix[0, 1], m02 = matrix[0, 2]
    cdef double m10 = matrix[1, 0], m11 = matrix[1, 1], m12 = matrix[1, 2]
    cdef Py_ssize_t y, x, y0i, y1i, x0i, x1i
    cdef double sx, sy, fx, fy, top, bottom
    with nogil:
        for y in range(h):
            for x in range(w):
                sx = m00 * x + m01 * y + m02
                sy = m10 * x + m11 * y + m12
                if sx < -0.5 or sx > w - 0.5 or sy < -0.5 or sy > h - 0.5:
                    out[y, x] = 0
                    continue
                x0i = <Py_ssize_t> floor(sx)
                fx = sx - floor(sx)
                y0i = <Py_ssize_t> floor(sy)
                fy = sy - floor(sy)
                x1i = _clamp(x0i + 1, w)
                x0i = _clamp(x0i, w)
                y1i = _clamp(y0i + 1, h)
                y0i = _clamp(y0i, h)
                top = (1.0 - fx) * img[y0i, x0i] + fx * img[y0i, x1i]
                bottom = (1.0 - fx) * img[y1i, x0i] + fx * img[y1i, x1i]
                out[y, x] = _round_u8((1.0 - fy) * top + fy * bottom)
    return out_arr
