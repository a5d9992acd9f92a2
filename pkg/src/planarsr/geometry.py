"""Planar projective geometry with first-order radial lens distortion.

Coordinate chain, in order: module plane coordinates ``y`` are mapped by a
homography ``H`` to undistorted normalized camera coordinates, radial
distortion acts on the normalized plane about its origin, and the intrinsic
matrix ``K`` maps distorted normalized coordinates to pixels.  Pixel
coordinates are ``(u, v)`` = (column, row) with the origin at the center of
the top-left pixel.

The distortion model is ``r_d = r_u + kappa * r_u**3``.  Its inverse is the
real root of a depressed cubic and is evaluated in closed form (Cardano for
a positive discriminant, the trigonometric form for a negative one).  For
``kappa < 0`` the model is only invertible inside the monotone window
``r_u < 1 / sqrt(-3 kappa)``; radii outside it have no valid preimage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DistortionDomainError, SingularProjectionError

# Dehomogenization guard: |scale| below this is treated as a point at infinity.
HOMOGENEOUS_EPS = 1e-12
# Homographies with |det| below this are rejected as rank deficient.
DET_EPS = 1e-10
# |kappa| below this behaves as zero; the cubic solve would lose precision.
KAPPA_TINY = 1e-12
# Distortion strengths beyond this are outside the model's intended range.
KAPPA_LIMIT = 0.5

_CANONICAL_NORM = math.sqrt(3.0)


def _check_kappa(kappa: float) -> float:
    kappa = float(kappa)
    if not math.isfinite(kappa) or abs(kappa) > KAPPA_LIMIT:
        raise DistortionDomainError(
            f"distortion coefficient {kappa!r} outside [-{KAPPA_LIMIT}, {KAPPA_LIMIT}]"
        )
    return kappa


def monotone_radius_limit(kappa: float) -> float:
    """Largest undistorted radius for which the model stays invertible.

    Infinite for ``kappa >= 0``; ``1/sqrt(-3 kappa)`` for barrel distortion.
    """
    kappa = _check_kappa(kappa)
    if kappa >= -KAPPA_TINY:
        return math.inf
    return 1.0 / math.sqrt(-3.0 * kappa)


def distort_radius(r_u: float, kappa: float) -> float:
    """Forward radial distortion ``r_d = r_u + kappa r_u^3`` for one radius."""
    kappa = _check_kappa(kappa)
    r_u = float(r_u)
    if not math.isfinite(r_u) or r_u < 0.0:
        raise DistortionDomainError(f"undistorted radius must be >= 0, got {r_u!r}")
    r_d = r_u + kappa * r_u * r_u * r_u
    if r_d < 0.0:
        # Barrel distortion folds radii past 1/sqrt(-kappa) through zero;
        # a negative distorted radius has no geometric meaning.
        raise DistortionDomainError(
            f"radius {r_u!r} lies beyond the fold-over point for kappa={kappa!r}"
        )
    return r_d


def cardano_case(r_d: float, kappa: float) -> int:
    """Sign of the cubic discriminant met when inverting the distortion.

    Returns +1, 0 or -1 for the positive, zero and negative discriminant
    branch.  ``kappa`` within ``KAPPA_TINY`` of zero short-circuits to the
    identity inverse, which is the zero-discriminant case.
    """
    kappa = _check_kappa(kappa)
    if abs(kappa) <= KAPPA_TINY:
        return 0
    p = 3.0 * kappa
    q = -27.0 * kappa * kappa * float(r_d)
    disc = q * q + 4.0 * p * p * p
    if disc > 0.0:
        return 1
    if disc < 0.0:
        return -1
    return 0


def undistort_radii(r_d, kappa: float):
    """Vectorized inverse distortion.

    Parameters
    ----------
    r_d : array_like
        Distorted radii, any shape.
    kappa : float
        Distortion coefficient.

    Returns
    -------
    (r_u, valid) : ndarray, ndarray of bool
        ``r_u`` matches the shape of ``r_d`` and is meaningful where
        ``valid`` is set.  A radius is invalid if it is negative, non-finite
        or (for ``kappa < 0``) has no preimage inside the monotone window.
    """
    kappa = _check_kappa(kappa)
    r_d = np.asarray(r_d, dtype=np.float64)
    valid = np.isfinite(r_d) & (r_d >= 0.0)

    if abs(kappa) <= KAPPA_TINY:
        r_u = np.where(valid, r_d, np.nan)
        return r_u, valid

    p = 3.0 * kappa
    q = -27.0 * kappa * kappa * r_d

    if kappa > 0.0:
        # Monotone on all of r_u >= 0; discriminant is strictly positive.
        disc = q * q + 4.0 * p * p * p
        s = np.sqrt(np.maximum(disc, 0.0))
        z = 0.5 * (np.cbrt(-4.0 * q + 4.0 * s) + np.cbrt(-4.0 * q - 4.0 * s))
        r_u = z / (3.0 * kappa)
        r_u = np.where(valid, np.maximum(r_u, 0.0), np.nan)
        return r_u, valid

    # kappa < 0: three real roots inside the fold; keep the one in the
    # monotone window that reproduces r_d best.  Radii past the fold-over
    # (discriminant >= 0) have no in-window root.
    limit = 1.0 / math.sqrt(-3.0 * kappa)
    disc = q * q + 4.0 * p * p * p
    with np.errstate(invalid="ignore"):
        arg = np.clip(-q / (2.0 * math.sqrt(-p * p * p)), -1.0, 1.0)
        theta = np.arccos(arg) / 3.0
    amp = 2.0 * math.sqrt(-p)
    best = np.full(r_d.shape, np.nan)
    best_err = np.full(r_d.shape, np.inf)
    window_hi = limit * (1.0 + 1e-12)
    for n in range(3):
        z = amp * np.cos(theta + n * (2.0 * math.pi / 3.0))
        cand = z / (3.0 * kappa)
        in_win = (cand >= 0.0) & (cand <= window_hi)
        err = np.abs(cand + kappa * cand ** 3 - r_d)
        take = in_win & (err < best_err)
        best = np.where(take, cand, best)
        best_err = np.where(take, err, best_err)
    valid &= (disc < 0.0) & np.isfinite(best)
    r_u = np.where(valid, best, np.nan)
    return r_u, valid


def undistort_radius(r_d: float, kappa: float) -> float:
    """Inverse radial distortion for one radius.

    Raises
    ------
    DistortionDomainError
        If ``r_d`` is negative/non-finite or has no preimage inside the
        monotone window (fold-over region of barrel distortion).
    """
    r_u, valid = undistort_radii(np.asarray([float(r_d)]), kappa)
    if not valid[0]:
        raise DistortionDomainError(
            f"radius {r_d!r} has no inverse inside the monotone window "
            f"(kappa={kappa!r})"
        )
    return float(r_u[0])


def distort_points(pts, kappa: float) -> np.ndarray:
    """Apply radial distortion to normalized-plane points, shape (n, 2)."""
    kappa = _check_kappa(kappa)
    pts = np.asarray(pts, dtype=np.float64)
    r2 = pts[..., 0] ** 2 + pts[..., 1] ** 2
    # ratio r_d/r_u = 1 + kappa r_u^2 has a removable singularity at r_u = 0
    return pts * (1.0 + kappa * r2)[..., None]


def distort_point(pt, kappa: float) -> np.ndarray:
    """Apply radial distortion to a single normalized-plane point."""
    return distort_points(np.asarray(pt, dtype=np.float64), kappa)


def undistort_points(pts, kappa: float):
    """Vectorized inverse distortion of normalized-plane points.

    Returns ``(points, valid)``; invalid rows are NaN.
    """
    pts = np.asarray(pts, dtype=np.float64)
    r_d = np.hypot(pts[..., 0], pts[..., 1])
    r_u, valid = undistort_radii(r_d, kappa)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(r_d > 0.0, r_u / r_d, 1.0)
    out = pts * ratio[..., None]
    out[~valid] = np.nan
    return out, valid


def undistort_point(pt, kappa: float) -> np.ndarray:
    """Inverse distortion of one point; raises DistortionDomainError if outside the window."""
    out, valid = undistort_points(np.asarray(pt, dtype=np.float64)[None, :], kappa)
    if not valid[0]:
        raise DistortionDomainError(
            f"point {pt!r} has no undistorted preimage (kappa={kappa!r})"
        )
    return out[0]


@dataclass(frozen=True)
class HomogeneousPoint2:
    """Homogeneous 2-D point (x1, x2, s)."""

    x1: float
    x2: float
    s: float = 1.0

    def dehomogenized(self) -> np.ndarray:
        if abs(self.s) <= HOMOGENEOUS_EPS:
            raise SingularProjectionError(
                f"homogeneous scale {self.s!r} too close to zero"
            )
        return np.array([self.x1 / self.s, self.x2 / self.s])


class Homography:
    """Invertible 3x3 plane-to-plane map, stored in canonical scale.

    Canonical scale means Frobenius norm ``sqrt(3)`` and, when the (3,3)
    entry is not negligible, a positive (3,3) entry.  Two matrices differing
    only by a nonzero scalar therefore compare equal entrywise, which keeps
    parameterizations and file round-trips stable.
    """

    __slots__ = ("m",)

    def __init__(self, m):
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError(f"homography must be 3x3, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("homography entries must be finite")
        det = np.linalg.det(m)
        norm = np.linalg.norm(m)
        if norm == 0.0 or abs(det) / norm ** 3 * _CANONICAL_NORM ** 3 < DET_EPS:
            raise SingularProjectionError(
                f"homography is rank deficient (det={det!r})"
            )
        m = m * (_CANONICAL_NORM / norm)
        if abs(m[2, 2]) > HOMOGENEOUS_EPS and m[2, 2] < 0.0:
            m = -m
        m.flags.writeable = False
        object.__setattr__(self, "m", m)

    def __setattr__(self, name, value):
        raise AttributeError("Homography is immutable")

    def __reduce__(self):
        return (Homography, (np.array(self.m),))

    @property
    def matrix(self) -> np.ndarray:
        return self.m

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.m))

    def compose(self, other: "Homography") -> "Homography":
        """Return self applied after ``other``."""
        return Homography(self.m @ other.m)

    def apply(self, pts) -> np.ndarray:
        """Map points (n, 2) (or (2,)), raising on near-zero scale."""
        pts = np.asarray(pts, dtype=np.float64)
        single = pts.ndim == 1
        out, valid = self.apply_masked(pts.reshape(-1, 2))
        if not np.all(valid):
            raise SingularProjectionError("point mapped to infinity")
        return out[0] if single else out

    def apply_masked(self, pts):
        """Map points (n, 2); returns (mapped, valid) with NaN where invalid."""
        pts = np.asarray(pts, dtype=np.float64)
        h = self.m
        x = h[0, 0] * pts[:, 0] + h[0, 1] * pts[:, 1] + h[0, 2]
        y = h[1, 0] * pts[:, 0] + h[1, 1] * pts[:, 1] + h[1, 2]
        s = h[2, 0] * pts[:, 0] + h[2, 1] * pts[:, 1] + h[2, 2]
        valid = np.abs(s) > HOMOGENEOUS_EPS
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.stack([x / s, y / s], axis=1)
        out[~valid] = np.nan
        return out, valid

    def __repr__(self):
        return f"Homography({self.m.tolist()!r})"

    @staticmethod
    def identity() -> "Homography":
        return Homography(np.eye(3))


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics plus first-order radial distortion.

    ``fx, fy`` are focal lengths in pixels, ``(cx, cy)`` the principal point
    (also the distortion center), ``skew`` the axis skew and ``kappa`` the
    radial coefficient acting on the normalized plane.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    skew: float = 0.0
    kappa: float = 0.0

    def __post_init__(self):
        if not (self.fx > 0.0 and self.fy > 0.0):
            raise ValueError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        _check_kappa(self.kappa)

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [
                [self.fx, self.skew, self.cx],
                [0.0, self.fy, self.cy],
                [0.0, 0.0, 1.0],
            ]
        )

    def scaled(self, factor: float) -> "CameraModel":
        """Intrinsics for the same scene at ``factor`` times the resolution.

        Pixel coordinates scale as ``u' = factor * u``; normalized
        coordinates and therefore ``kappa`` are unchanged.
        """
        return CameraModel(
            fx=self.fx * factor,
            fy=self.fy * factor,
            cx=self.cx * factor,
            cy=self.cy * factor,
            skew=self.skew * factor,
            kappa=self.kappa,
        )

    def with_kappa(self, kappa: float) -> "CameraModel":
        return CameraModel(self.fx, self.fy, self.cx, self.cy, self.skew, kappa)

    def pixel_from_normalized(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=np.float64)
        u = self.fx * xy[..., 0] + self.skew * xy[..., 1] + self.cx
        v = self.fy * xy[..., 1] + self.cy
        return np.stack([u, v], axis=-1)

    def normalized_from_pixel(self, uv) -> np.ndarray:
        uv = np.asarray(uv, dtype=np.float64)
        y = (uv[..., 1] - self.cy) / self.fy
        x = (uv[..., 0] - self.cx - self.skew * y) / self.fx
        return np.stack([x, y], axis=-1)


def forward_map_points(pts, hom: Homography, cam: CameraModel):
    """Module plane -> pixel coordinates for points (n, 2).

    Returns ``(uv, valid)``; a point is invalid only if the homography sends
    it to infinity.  The forward distortion is defined for every radius.
    """
    mapped, valid = hom.apply_masked(np.asarray(pts, dtype=np.float64))
    with np.errstate(invalid="ignore"):
        distorted = distort_points(np.nan_to_num(mapped, nan=0.0), cam.kappa)
    uv = cam.pixel_from_normalized(distorted)
    uv[~valid] = np.nan
    return uv, valid


def forward_map(pt, hom: Homography, cam: CameraModel) -> np.ndarray:
    """Module plane -> pixel coordinates for a single point."""
    uv, valid = forward_map_points(np.asarray(pt, dtype=np.float64)[None, :], hom, cam)
    if not valid[0]:
        raise SingularProjectionError(f"point {pt!r} maps to infinity")
    return uv[0]


def inverse_map_points(uv, hom: Homography, cam: CameraModel):
    """Pixel -> module plane coordinates for points (n, 2).

    Returns ``(pts, valid)``.  Invalid where the inverse distortion has no
    in-window solution or the inverse homography sends the point to infinity.
    """
    xy = cam.normalized_from_pixel(np.asarray(uv, dtype=np.float64))
    und, valid = undistort_points(xy, cam.kappa)
    mapped, v2 = hom.inverse().apply_masked(np.nan_to_num(und, nan=0.0))
    valid = valid & v2
    mapped[~valid] = np.nan
    return mapped, valid


def inverse_map(uv, hom: Homography, cam: CameraModel) -> np.ndarray:
    """Pixel -> module plane coordinates for a single point.

    Raises DistortionDomainError outside the invertible window and
    SingularProjectionError on a vanishing homogeneous scale.
    """
    xy = cam.normalized_from_pixel(np.asarray(uv, dtype=np.float64))
    und = undistort_point(xy, cam.kappa)  # raises DistortionDomainError
    mapped, valid = hom.inverse().apply_masked(und[None, :])
    if not valid[0]:
        raise SingularProjectionError(f"pixel {uv!r} maps to infinity on the module plane")
    return mapped[0]
