# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel implementations.

Semantics mirror planarsr._core_np; see that module for conventions.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport ceil, exp, fabs, floor, isfinite, sqrt

cnp.import_array()


def bilinear_sample(cnp.float64_t[:, ::1] img, cnp.float64_t[::1] xs,
                    cnp.float64_t[::1] ys):
    cdef Py_ssize_t h = img.shape[0]
    cdef Py_ssize_t w = img.shape[1]
    cdef Py_ssize_t n = xs.shape[0]
    vals_arr = np.zeros(n, dtype=np.float64)
    valid_arr = np.zeros(n, dtype=np.uint8)
    cdef cnp.float64_t[::1] vals = vals_arr
    cdef cnp.uint8_t[::1] valid = valid_arr
    cdef Py_ssize_t i, x0, y0, x1, y1
    cdef double x, y, fx, fy, v00, v01, v10, v11, top, bot
    cdef Py_ssize_t x0_max = w - 2 if w >= 2 else 0
    cdef Py_ssize_t y0_max = h - 2 if h >= 2 else 0
    for i in range(n):
        x = xs[i]
        y = ys[i]
        if not (x >= 0.0 and x <= w - 1.0 and y >= 0.0 and y <= h - 1.0):
            continue
        x0 = <Py_ssize_t>floor(x)
        y0 = <Py_ssize_t>floor(y)
        if x0 < 0:
            x0 = 0
        elif x0 > x0_max:
            x0 = x0_max
        if y0 < 0:
            y0 = 0
        elif y0 > y0_max:
            y0 = y0_max
        x1 = x0 + 1 if x0 + 1 < w else w - 1
        y1 = y0 + 1 if y0 + 1 < h else h - 1
        fx = x - x0
        if fx < 0.0:
            fx = 0.0
        elif fx > 1.0:
            fx = 1.0
        fy = y - y0
        if fy < 0.0:
            fy = 0.0
        elif fy > 1.0:
            fy = 1.0
        v00 = img[y0, x0]
        v01 = img[y0, x1]
        v10 = img[y1, x0]
        v11 = img[y1, x1]
        if not (isfinite(v00) and isfinite(v01) and isfinite(v10) and isfinite(v11)):
            continue
        top = v00 * (1.0 - fx) + v01 * fx
        bot = v10 * (1.0 - fx) + v11 * fx
        vals[i] = top * (1.0 - fy) + bot * fy
        valid[i] = 1
    return vals_arr, valid_arr.astype(bool)


def warp_sample(cnp.float64_t[:, ::1] tmpl, cnp.float64_t[::1] xs,
                cnp.float64_t[::1] ys, pre_valid, hinv,
                double gx_scale, double gx_off, double gy_scale,
                double gy_off, double homog_eps):
    cdef cnp.uint8_t[::1] pre = np.ascontiguousarray(pre_valid, dtype=np.uint8)
    # np.array copies: Homography matrices arrive with writeable=False, which
    # a typed memoryview rejects.
    cdef cnp.float64_t[:, ::1] hm = np.array(hinv, dtype=np.float64)
    cdef Py_ssize_t h = tmpl.shape[0]
    cdef Py_ssize_t w = tmpl.shape[1]
    cdef Py_ssize_t n = xs.shape[0]
    vals_arr = np.zeros(n, dtype=np.float64)
    valid_arr = np.zeros(n, dtype=np.uint8)
    cdef cnp.float64_t[::1] vals = vals_arr
    cdef cnp.uint8_t[::1] valid = valid_arr
    cdef double h00 = hm[0, 0], h01 = hm[0, 1], h02 = hm[0, 2]
    cdef double h10 = hm[1, 0], h11 = hm[1, 1], h12 = hm[1, 2]
    cdef double h20 = hm[2, 0], h21 = hm[2, 1], h22 = hm[2, 2]
    cdef Py_ssize_t i, x0, y0, x1, y1
    cdef double x, y, s, gx, gy, fx, fy, v00, v01, v10, v11, top, bot
    cdef Py_ssize_t x0_max = w - 2 if w >= 2 else 0
    cdef Py_ssize_t y0_max = h - 2 if h >= 2 else 0
    for i in range(n):
        if not pre[i]:
            continue
        x = xs[i]
        y = ys[i]
        s = h20 * x + h21 * y + h22
        if not (fabs(s) > homog_eps):
            continue
        gx = (h00 * x + h01 * y + h02) / s * gx_scale + gx_off
        gy = (h10 * x + h11 * y + h12) / s * gy_scale + gy_off
        if not (gx >= 0.0 and gx <= w - 1.0 and gy >= 0.0 and gy <= h - 1.0):
            continue
        x0 = <Py_ssize_t>floor(gx)
        y0 = <Py_ssize_t>floor(gy)
        if x0 < 0:
            x0 = 0
        elif x0 > x0_max:
            x0 = x0_max
        if y0 < 0:
            y0 = 0
        elif y0 > y0_max:
            y0 = y0_max
        x1 = x0 + 1 if x0 + 1 < w else w - 1
        y1 = y0 + 1 if y0 + 1 < h else h - 1
        fx = gx - x0
        if fx < 0.0:
            fx = 0.0
        elif fx > 1.0:
            fx = 1.0
        fy = gy - y0
        if fy < 0.0:
            fy = 0.0
        elif fy > 1.0:
            fy = 1.0
        v00 = tmpl[y0, x0]
        v01 = tmpl[y0, x1]
        v10 = tmpl[y1, x0]
        v11 = tmpl[y1, x1]
        if not (isfinite(v00) and isfinite(v01) and isfinite(v10) and isfinite(v11)):
            continue
        top = v00 * (1.0 - fx) + v01 * fx
        bot = v10 * (1.0 - fx) + v11 * fx
        vals[i] = top * (1.0 - fy) + bot * fy
        valid[i] = 1
    return vals_arr, valid_arr.astype(bool)


cdef inline void _catmull(double t, double* w) noexcept:
    cdef double t2 = t * t
    cdef double t3 = t2 * t
    w[0] = -0.5 * t3 + t2 - 0.5 * t
    w[1] = 1.5 * t3 - 2.5 * t2 + 1.0
    w[2] = -1.5 * t3 + 2.0 * t2 + 0.5 * t
    w[3] = 0.5 * t3 - 0.5 * t2


def bicubic_sample(cnp.float64_t[:, ::1] img, cnp.float64_t[::1] xs,
                   cnp.float64_t[::1] ys):
    cdef Py_ssize_t h = img.shape[0]
    cdef Py_ssize_t w = img.shape[1]
    cdef Py_ssize_t n = xs.shape[0]
    vals_arr = np.zeros(n, dtype=np.float64)
    valid_arr = np.zeros(n, dtype=np.uint8)
    cdef cnp.float64_t[::1] vals = vals_arr
    cdef cnp.uint8_t[::1] valid = valid_arr
    cdef Py_ssize_t i, j, k, x0, y0, xx, yy
    cdef double x, y, acc, row
    cdef double wx[4]
    cdef double wy[4]
    for i in range(n):
        x = xs[i]
        y = ys[i]
        if not (x >= -0.5 and x <= w - 0.5 and y >= -0.5 and y <= h - 0.5):
            continue
        x0 = <Py_ssize_t>floor(x)
        y0 = <Py_ssize_t>floor(y)
        _catmull(x - x0, wx)
        _catmull(y - y0, wy)
        acc = 0.0
        for j in range(4):
            yy = y0 + (j - 1)
            if yy < 0:
                yy = 0
            elif yy >= h:
                yy = h - 1
            row = 0.0
            for k in range(4):
                xx = x0 + (k - 1)
                if xx < 0:
                    xx = 0
                elif xx >= w:
                    xx = w - 1
                row += wx[k] * img[yy, xx]
            acc += wy[j] * row
        vals[i] = acc
        valid[i] = 1
    return vals_arr, valid_arr.astype(bool)


cdef inline Py_ssize_t _rint(double x) noexcept:
    # numpy rint: round half to even
    cdef double f = floor(x)
    cdef double r = x - f
    cdef Py_ssize_t base = <Py_ssize_t>f
    if r > 0.5:
        return base + 1
    if r < 0.5:
        return base
    # tie: round to even
    if base % 2 == 0:
        return base
    return base + 1


def stencil_build(cnp.float64_t[::1] xs, cnp.float64_t[::1] ys, valid_in,
                  Py_ssize_t hr_h, Py_ssize_t hr_w, double sigma):
    cdef Py_ssize_t n = xs.shape[0]
    cdef Py_ssize_t radius = <Py_ssize_t>ceil(3.0 * sigma)
    cdef Py_ssize_t k = 2 * radius + 1
    cdef cnp.uint8_t[::1] vin = np.ascontiguousarray(valid_in, dtype=np.uint8)
    ix0_arr = np.zeros(n, dtype=np.int64)
    iy0_arr = np.zeros(n, dtype=np.int64)
    wx_arr = np.zeros((n, k), dtype=np.float64)
    wy_arr = np.zeros((n, k), dtype=np.float64)
    inv_norm_arr = np.zeros(n, dtype=np.float64)
    row_valid_arr = np.zeros(n, dtype=np.uint8)
    cdef cnp.int64_t[::1] ix0 = ix0_arr
    cdef cnp.int64_t[::1] iy0 = iy0_arr
    cdef cnp.float64_t[:, ::1] wx = wx_arr
    cdef cnp.float64_t[:, ::1] wy = wy_arr
    cdef cnp.float64_t[::1] inv_norm = inv_norm_arr
    cdef cnp.uint8_t[::1] row_valid = row_valid_arr
    cdef double inv_two_s2 = 1.0 / (2.0 * sigma * sigma)
    cdef double trunc = 3.0 * sigma
    cdef Py_ssize_t i, j, cx, cy
    cdef double x, y, d, sx, sy, wv
    cdef Py_ssize_t bx, by
    for i in range(n):
        if not vin[i]:
            continue
        x = xs[i]
        y = ys[i]
        if not (isfinite(x) and isfinite(y)):
            continue
        bx = _rint(x)
        by = _rint(y)
        sx = 0.0
        for j in range(k):
            cx = bx + (j - radius)
            d = cx - x
            if fabs(d) > trunc or cx < 0 or cx >= hr_w:
                wv = 0.0
            else:
                wv = exp(-d * d * inv_two_s2)
            wx[i, j] = wv
            sx += wv
        sy = 0.0
        for j in range(k):
            cy = by + (j - radius)
            d = cy - y
            if fabs(d) > trunc or cy < 0 or cy >= hr_h:
                wv = 0.0
            else:
                wv = exp(-d * d * inv_two_s2)
            wy[i, j] = wv
            sy += wv
        if sx > 0.0 and sy > 0.0:
            ix0[i] = bx
            iy0[i] = by
            inv_norm[i] = 1.0 / (sx * sy)
            row_valid[i] = 1
        else:
            for j in range(k):
                wx[i, j] = 0.0
                wy[i, j] = 0.0
    return (ix0_arr, iy0_arr, wx_arr, wy_arr, inv_norm_arr,
            row_valid_arr.astype(bool))


def stencil_forward(cnp.int64_t[::1] ix0, cnp.int64_t[::1] iy0,
                    cnp.float64_t[:, ::1] wx, cnp.float64_t[:, ::1] wy,
                    cnp.float64_t[::1] inv_norm, row_valid,
                    cnp.float64_t[:, ::1] f):
    cdef Py_ssize_t h = f.shape[0]
    cdef Py_ssize_t w = f.shape[1]
    cdef Py_ssize_t n = wx.shape[0]
    cdef Py_ssize_t k = wx.shape[1]
    cdef Py_ssize_t radius = (k - 1) // 2
    cdef cnp.uint8_t[::1] rv = np.ascontiguousarray(row_valid, dtype=np.uint8)
    out_arr = np.zeros(n, dtype=np.float64)
    cdef cnp.float64_t[::1] out = out_arr
    cdef Py_ssize_t i, j, m, cy, cx
    cdef double acc, inner, wyj
    for i in range(n):
        if not rv[i]:
            continue
        acc = 0.0
        for j in range(k):
            wyj = wy[i, j]
            if wyj == 0.0:
                continue
            cy = iy0[i] + (j - radius)
            inner = 0.0
            for m in range(k):
                if wx[i, m] == 0.0:
                    continue
                cx = ix0[i] + (m - radius)
                inner += wx[i, m] * f[cy, cx]
            acc += wyj * inner
        out[i] = acc * inv_norm[i]
    return out_arr


def stencil_adjoint(cnp.int64_t[::1] ix0, cnp.int64_t[::1] iy0,
                    cnp.float64_t[:, ::1] wx, cnp.float64_t[:, ::1] wy,
                    cnp.float64_t[::1] inv_norm, row_valid,
                    cnp.float64_t[::1] g, Py_ssize_t hr_h, Py_ssize_t hr_w):
    cdef Py_ssize_t n = wx.shape[0]
    cdef Py_ssize_t k = wx.shape[1]
    cdef Py_ssize_t radius = (k - 1) // 2
    cdef cnp.uint8_t[::1] rv = np.ascontiguousarray(row_valid, dtype=np.uint8)
    acc_arr = np.zeros((hr_h, hr_w), dtype=np.float64)
    cdef cnp.float64_t[:, ::1] acc = acc_arr
    cdef Py_ssize_t i, j, m, cy, cx
    cdef double gv, wyj
    for i in range(n):
        if not rv[i]:
            continue
        gv = g[i] * inv_norm[i]
        if gv == 0.0:
            continue
        for j in range(k):
            wyj = wy[i, j] * gv
            if wyj == 0.0:
                continue
            cy = iy0[i] + (j - radius)
            for m in range(k):
                if wx[i, m] == 0.0:
                    continue
                cx = ix0[i] + (m - radius)
                acc[cy, cx] += wx[i, m] * wyj
    return acc_arr


def btv_value_grad(cnp.float64_t[:, ::1] f, int window, double alpha,
                   double eps, weights=None):
    cdef Py_ssize_t h = f.shape[0]
    cdef Py_ssize_t w = f.shape[1]
    grad_arr = np.zeros((h, w), dtype=np.float64)
    cdef cnp.float64_t[:, ::1] grad = grad_arr
    cdef cnp.float64_t[:, :, ::1] wk
    cdef bint has_w = weights is not None
    if has_w:
        wk = np.ascontiguousarray(weights, dtype=np.float64)
    cdef double value = 0.0
    cdef double eps2 = eps * eps
    cdef Py_ssize_t dy, dx, r, c, rs, cs, idx
    cdef double a, d, root, psi, wv
    idx = 0
    for dy in range(-window, window + 1):
        for dx in range(-window, window + 1):
            if dy == 0 and dx == 0:
                continue
            a = alpha ** (abs(dy) + abs(dx))
            for r in range(h):
                rs = r - dy
                if rs < 0:
                    rs = 0
                elif rs >= h:
                    rs = h - 1
                for c in range(w):
                    cs = c - dx
                    if cs < 0:
                        cs = 0
                    elif cs >= w:
                        cs = w - 1
                    d = f[r, c] - f[rs, cs]
                    root = sqrt(d * d + eps2)
                    if has_w:
                        wv = wk[idx, r, c]
                        value += a * wv * (root - eps)
                        psi = wv * d / root
                    else:
                        value += a * (root - eps)
                        psi = d / root
                    grad[r, c] += a * psi
                    grad[rs, cs] -= a * psi
            idx += 1
    return value, grad_arr


def btv_value(cnp.float64_t[:, ::1] f, int window, double alpha,
              double eps, weights=None):
    cdef Py_ssize_t h = f.shape[0]
    cdef Py_ssize_t w = f.shape[1]
    cdef cnp.float64_t[:, :, ::1] wk
    cdef bint has_w = weights is not None
    if has_w:
        wk = np.ascontiguousarray(weights, dtype=np.float64)
    cdef double value = 0.0
    cdef double eps2 = eps * eps
    cdef Py_ssize_t dy, dx, r, c, rs, cs, idx
    cdef double a, d, root
    idx = 0
    for dy in range(-window, window + 1):
        for dx in range(-window, window + 1):
            if dy == 0 and dx == 0:
                continue
            a = alpha ** (abs(dy) + abs(dx))
            for r in range(h):
                rs = r - dy
                if rs < 0:
                    rs = 0
                elif rs >= h:
                    rs = h - 1
                for c in range(w):
                    cs = c - dx
                    if cs < 0:
                        cs = 0
                    elif cs >= w:
                        cs = w - 1
                    d = f[r, c] - f[rs, cs]
                    root = sqrt(d * d + eps2)
                    if has_w:
                        value += a * wk[idx, r, c] * (root - eps)
                    else:
                        value += a * (root - eps)
            idx += 1
    return value
