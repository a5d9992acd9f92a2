"""Pure-numpy kernel implementations.

Reference semantics for the compiled extension; both backends must agree to
float64 rounding.  Sampling conventions:

* ``bilinear_sample`` is strict: a sample is valid only if its position lies
  in ``[0, W-1] x [0, H-1]`` and all four taps are finite (NaN taps mark
  masked pixels).
* ``bicubic_sample`` is lenient: taps replicate at the border and a sample
  is valid if its position lies inside the pixel area
  ``[-0.5, W-0.5] x [-0.5, H-0.5]``.  Input images are assumed finite.

Stencil layout shared with the compiled backend: each output row has a
window of half-width R centered on the rounded target position, with
separable x/y weight vectors of length 2R+1.  Out-of-bounds taps and taps
beyond the truncation radius carry zero weight, so clipped index gathers
are safe.
"""

from __future__ import annotations

import math

import numpy as np


def bilinear_sample(img, xs, ys):
    """Sample ``img`` at (xs, ys); returns (values, valid)."""
    img = np.asarray(img, dtype=np.float64)
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    h, w = img.shape
    valid = (xs >= 0.0) & (xs <= w - 1.0) & (ys >= 0.0) & (ys <= h - 1.0)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = np.clip(xs - x0, 0.0, 1.0)
    fy = np.clip(ys - y0, 0.0, 1.0)
    v00 = img[y0, x0]
    v01 = img[y0, x1]
    v10 = img[y1, x0]
    v11 = img[y1, x1]
    valid &= (
        np.isfinite(v00) & np.isfinite(v01) & np.isfinite(v10) & np.isfinite(v11)
    )
    v00 = np.nan_to_num(v00)
    v01 = np.nan_to_num(v01)
    v10 = np.nan_to_num(v10)
    v11 = np.nan_to_num(v11)
    top = v00 * (1.0 - fx) + v01 * fx
    bot = v10 * (1.0 - fx) + v11 * fx
    vals = top * (1.0 - fy) + bot * fy
    vals = np.where(valid, vals, 0.0)
    return vals, valid


def warp_sample(tmpl, xs, ys, pre_valid, hinv, gx_scale, gx_off,
                gy_scale, gy_off, homog_eps):
    """Projective warp followed by strict bilinear sampling.

    (xs, ys) are source-plane points; each is mapped through the 3x3
    matrix ``hinv``, converted to grid coordinates by the affine
    (scale, offset) pair per axis, and sampled from ``tmpl`` under
    bilinear_sample's validity rules.  ``pre_valid`` masks points that are
    already known to be unusable; near-zero homogeneous scales are
    invalid.  Fused in the compiled backend because it is the inner loop
    of photometric refinement.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    pre_valid = np.asarray(pre_valid, dtype=bool)
    h = np.asarray(hinv, dtype=np.float64)
    s = h[2, 0] * xs + h[2, 1] * ys + h[2, 2]
    ok = pre_valid & (np.abs(s) > homog_eps)
    with np.errstate(invalid="ignore", divide="ignore"):
        px = (h[0, 0] * xs + h[0, 1] * ys + h[0, 2]) / s
        py = (h[1, 0] * xs + h[1, 1] * ys + h[1, 2]) / s
    gx = np.where(ok, px * gx_scale + gx_off, -1e9)
    gy = np.where(ok, py * gy_scale + gy_off, -1e9)
    gx = np.nan_to_num(gx, nan=-1e9, posinf=-1e9, neginf=-1e9)
    gy = np.nan_to_num(gy, nan=-1e9, posinf=-1e9, neginf=-1e9)
    vals, valid = bilinear_sample(tmpl, gx, gy)
    return vals, valid & ok


def _catmull_weights(t):
    """Catmull-Rom (a = -0.5) tap weights for fractional offset t in [0, 1]."""
    t2 = t * t
    t3 = t2 * t
    w0 = -0.5 * t3 + t2 - 0.5 * t
    w1 = 1.5 * t3 - 2.5 * t2 + 1.0
    w2 = -1.5 * t3 + 2.0 * t2 + 0.5 * t
    w3 = 0.5 * t3 - 0.5 * t2
    return w0, w1, w2, w3


def bicubic_sample(img, xs, ys):
    """Catmull-Rom sample of ``img`` at (xs, ys) with replicate borders."""
    img = np.asarray(img, dtype=np.float64)
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    h, w = img.shape
    valid = (xs >= -0.5) & (xs <= w - 0.5) & (ys >= -0.5) & (ys <= h - 0.5)
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    wx = _catmull_weights(xs - x0)
    wy = _catmull_weights(ys - y0)
    vals = np.zeros_like(xs)
    for j in range(4):
        yy = np.clip(y0 + (j - 1), 0, h - 1)
        row = np.zeros_like(xs)
        for i in range(4):
            xx = np.clip(x0 + (i - 1), 0, w - 1)
            row += wx[i] * img[yy, xx]
        vals += wy[j] * row
    vals = np.where(valid, vals, 0.0)
    return vals, valid


def stencil_build(xs, ys, valid_in, hr_h, hr_w, sigma):
    """Separable truncated-Gaussian stencils for each target position.

    Returns (ix0, iy0, wx, wy, inv_norm, row_valid).  ``wx``/``wy`` are the
    unnormalized per-axis weights over offsets -R..R; ``inv_norm`` is the
    reciprocal of the in-bounds weight sum so that each valid row sums to 1.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    valid_in = np.asarray(valid_in, dtype=bool)
    radius = int(math.ceil(3.0 * sigma))
    offs = np.arange(-radius, radius + 1, dtype=np.float64)
    safe = np.isfinite(xs) & np.isfinite(ys) & valid_in
    xs_s = np.where(safe, xs, 0.0)
    ys_s = np.where(safe, ys, 0.0)
    ix0 = np.rint(xs_s).astype(np.int64)
    iy0 = np.rint(ys_s).astype(np.int64)
    inv_two_s2 = 1.0 / (2.0 * sigma * sigma)
    trunc = 3.0 * sigma

    dx = (ix0[:, None] + offs[None, :]) - xs_s[:, None]
    wx = np.exp(-dx * dx * inv_two_s2)
    wx[np.abs(dx) > trunc] = 0.0
    cols = ix0[:, None] + offs[None, :].astype(np.int64)
    wx[(cols < 0) | (cols >= hr_w)] = 0.0

    dy = (iy0[:, None] + offs[None, :]) - ys_s[:, None]
    wy = np.exp(-dy * dy * inv_two_s2)
    wy[np.abs(dy) > trunc] = 0.0
    rows = iy0[:, None] + offs[None, :].astype(np.int64)
    wy[(rows < 0) | (rows >= hr_h)] = 0.0

    sx = wx.sum(axis=1)
    sy = wy.sum(axis=1)
    row_valid = safe & (sx > 0.0) & (sy > 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_norm = np.where(row_valid, 1.0 / (sx * sy), 0.0)
    wx[~row_valid] = 0.0
    wy[~row_valid] = 0.0
    ix0[~row_valid] = 0
    iy0[~row_valid] = 0
    return ix0, iy0, wx, wy, inv_norm, row_valid


def stencil_forward(ix0, iy0, wx, wy, inv_norm, row_valid, f):
    """Apply the stencils to an HR image; returns one value per row."""
    f = np.asarray(f, dtype=np.float64)
    h, w = f.shape
    n, k = wx.shape
    radius = (k - 1) // 2
    out = np.zeros(n)
    for j in range(k):
        yy = np.clip(iy0 + (j - radius), 0, h - 1)
        wyj = wy[:, j]
        if not np.any(wyj):
            continue
        inner = np.zeros(n)
        for i in range(k):
            xx = np.clip(ix0 + (i - radius), 0, w - 1)
            inner += wx[:, i] * f[yy, xx]
        out += wyj * inner
    out *= inv_norm
    out[~row_valid] = 0.0
    return out


def stencil_adjoint(ix0, iy0, wx, wy, inv_norm, row_valid, g, hr_h, hr_w):
    """Transpose of ``stencil_forward`` applied to row values ``g``."""
    g = np.asarray(g, dtype=np.float64)
    n, k = wx.shape
    radius = (k - 1) // 2
    acc = np.zeros((hr_h, hr_w))
    gv = np.where(row_valid, g * inv_norm, 0.0)
    for j in range(k):
        yy = iy0 + (j - radius)
        wyj = wy[:, j] * gv
        sel_j = wyj != 0.0
        if not np.any(sel_j):
            continue
        for i in range(k):
            xx = ix0 + (i - radius)
            contrib = wx[:, i] * wyj
            sel = sel_j & (contrib != 0.0)
            if not np.any(sel):
                continue
            np.add.at(acc, (yy[sel], xx[sel]), contrib[sel])
    return acc


def btv_value(f, window, alpha, eps, weights=None):
    """BTV prior value only (no gradient); see btv_value_grad."""
    f = np.asarray(f, dtype=np.float64)
    eps2 = eps * eps
    value = 0.0
    idx = 0
    for dy in range(-window, window + 1):
        for dx in range(-window, window + 1):
            if dy == 0 and dx == 0:
                continue
            a = alpha ** (abs(dy) + abs(dx))
            d = f - _shift_replicate(f, dy, dx)
            term = np.sqrt(d * d + eps2) - eps
            if weights is not None:
                term = term * weights[idx]
            value += a * float(term.sum())
            idx += 1
    return value


def _shift_replicate(f, dy, dx):
    """Value at (r, c) is f[clip(r - dy), clip(c - dx)] (replicate border)."""
    h, w = f.shape
    rows = np.clip(np.arange(h) - dy, 0, h - 1)
    cols = np.clip(np.arange(w) - dx, 0, w - 1)
    return f[np.ix_(rows, cols)]


def _shift_replicate_adjoint(y, dy, dx):
    """Transpose of ``_shift_replicate`` for the same (dy, dx)."""
    h, w = y.shape
    out = np.zeros_like(y)
    # Scatter along rows: row r receives y rows with clip(r' - dy) == r.
    rows = np.clip(np.arange(h) - dy, 0, h - 1)
    cols = np.clip(np.arange(w) - dx, 0, w - 1)
    tmp = np.zeros_like(y)
    np.add.at(tmp, rows, y)
    np.add.at(out.T, cols, tmp.T)
    return out


def btv_value_grad(f, window, alpha, eps, weights=None):
    """Bilateral total variation value and gradient.

    Shift order: (dy, dx) lexicographic over dy in -P..P, dx in -P..P with
    (0, 0) skipped; ``weights``, when given, has shape (S, H, W) in that
    order.  Charbonnier penalty sqrt(t^2 + eps^2) - eps.
    """
    f = np.asarray(f, dtype=np.float64)
    value = 0.0
    grad = np.zeros_like(f)
    eps2 = eps * eps
    idx = 0
    for dy in range(-window, window + 1):
        for dx in range(-window, window + 1):
            if dy == 0 and dx == 0:
                continue
            a = alpha ** (abs(dy) + abs(dx))
            d = f - _shift_replicate(f, dy, dx)
            root = np.sqrt(d * d + eps2)
            phi = root - eps
            if weights is None:
                value += a * float(phi.sum())
                psi = d / root
            else:
                wk = weights[idx]
                value += a * float((wk * phi).sum())
                psi = wk * d / root
            grad += a * (psi - _shift_replicate_adjoint(psi, dy, dx))
            idx += 1
    return value, grad
