"""Forward observation model: motion fields and sparse system matrices.

Each low-resolution frame is modeled as a sampled, blurred view of the
high-resolution module raster.  For LR pixel (u, v) the motion field stores
the displacement from the magnified position ``(s u + (s-1)/2,
s v + (s-1)/2)`` to the HR grid coordinate the pixel actually observes
(the offset convention aligns pixel centers, so an identity chain at s = 1
gives a zero field).  The system matrix then places an isotropic Gaussian
point-spread stencil at each mapped position; rows are normalized to unit
sum, and rows whose pixel sees no part of the module are flagged invalid
and excluded from the data term.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from . import kernels
from .grids import HrGridSpec, ImageGrid

if TYPE_CHECKING:  # import cycle: registration imports nothing from here
    from .registration import RegistrationResult

# Default PSF width is 0.4 HR pixels per unit of magnification.
PSF_SIGMA_PER_MAGNIFICATION = 0.4


def lr_base_positions(lr_shape: tuple[int, int], magnification: int):
    """Magnified LR pixel-center positions on the HR grid, row-major.

    Returns (base_x, base_y), each flat of length H*W.
    """
    h, w = lr_shape
    s = float(magnification)
    u = np.arange(w, dtype=np.float64)
    v = np.arange(h, dtype=np.float64)
    uu, vv = np.meshgrid(u, v)
    off = (s - 1.0) / 2.0
    return (s * uu.ravel() + off), (s * vv.ravel() + off)


@dataclass
class MotionField:
    """Per-frame displacement field on the LR raster.

    ``vectors`` has shape (H, W, 2) storing (dx, dy) in HR pixel units from
    the magnified base position; ``valid`` is False where the LR pixel does
    not observe the module (outside its rectangle or outside the
    invertible distortion window).
    """

    frame_index: int
    vectors: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.vectors.ndim != 3 or self.vectors.shape[2] != 2:
            raise ValueError(f"vectors must be (H, W, 2), got {self.vectors.shape}")
        if self.valid.shape != self.vectors.shape[:2]:
            raise ValueError(
                f"valid shape {self.valid.shape} != field shape {self.vectors.shape[:2]}"
            )

    @property
    def lr_shape(self) -> tuple[int, int]:
        return self.valid.shape

    def mapped_positions(self, magnification: int):
        """Absolute HR grid coordinates observed by each LR pixel (flat x, y)."""
        bx, by = lr_base_positions(self.lr_shape, magnification)
        return (bx + self.vectors[..., 0].ravel(),
                by + self.vectors[..., 1].ravel())


def build_motion_field(frame_index: int, reg: "RegistrationResult",
                       hr: HrGridSpec,
                       lr_shape: tuple[int, int] | None = None) -> MotionField:
    """Motion field for one frame from registered geometry.

    LR pixel centers are mapped through the inverse camera chain onto the
    module plane; pixels landing outside the module rectangle or outside
    the distortion window are invalid.  ``lr_shape`` defaults to the shape
    the registration was computed on.
    """
    from .geometry import inverse_map_points

    if lr_shape is None:
        lr_shape = reg.lr_shape
    if lr_shape is None:
        raise ValueError("registration has no frame size; pass lr_shape explicitly")
    h, w = lr_shape
    u = np.arange(w, dtype=np.float64)
    v = np.arange(h, dtype=np.float64)
    uu, vv = np.meshgrid(u, v)
    uv = np.stack([uu.ravel(), vv.ravel()], axis=1)
    pts, valid = inverse_map_points(uv, reg.homographies[frame_index], reg.camera)
    inside = np.zeros(uv.shape[0], dtype=bool)
    inside[valid] = hr.contains(pts[valid])
    valid &= inside

    grid = np.full((uv.shape[0], 2), np.nan)
    grid[valid] = hr.module_to_grid(pts[valid])
    bx, by = lr_base_positions(lr_shape, hr.magnification)
    vec = np.stack([grid[:, 0] - bx, grid[:, 1] - by], axis=1)
    vec[~valid] = 0.0
    return MotionField(
        frame_index=frame_index,
        vectors=vec.reshape(h, w, 2),
        valid=valid.reshape(h, w),
    )


class SystemMatrix:
    """Sparse LR-from-HR sampling operator for one frame.

    Logically this is a (rows x cols) sparse matrix, one row per LR pixel in
    row-major order, whose entries are a normalized truncated-Gaussian
    stencil around the mapped HR position.  Rows are stored as a separable
    factorization (window center plus per-axis weight vectors) to keep
    memory bounded for large frames; ``to_csr``/``to_dense`` materialize
    the explicit (col, weight) form.  Instances are immutable by convention
    and safe to share across threads.
    """

    def __init__(self, frame_index: int, lr_shape, hr_shape, sigma: float,
                 ix0, iy0, wx, wy, inv_norm, row_valid):
        self.frame_index = int(frame_index)
        self.lr_shape = (int(lr_shape[0]), int(lr_shape[1]))
        self.hr_shape = (int(hr_shape[0]), int(hr_shape[1]))
        self.sigma = float(sigma)
        self.ix0 = ix0
        self.iy0 = iy0
        self.wx = wx
        self.wy = wy
        self.inv_norm = inv_norm
        self.row_valid = row_valid

    @property
    def rows(self) -> int:
        return self.lr_shape[0] * self.lr_shape[1]

    @property
    def cols(self) -> int:
        return self.hr_shape[0] * self.hr_shape[1]

    @property
    def radius(self) -> int:
        return (self.wx.shape[1] - 1) // 2

    def row_entries(self, row: int):
        """Explicit (col, weight) pairs of one row, weights summing to 1."""
        if not self.row_valid[row]:
            return np.empty(0, dtype=np.int64), np.empty(0)
        r = self.radius
        offs = np.arange(-r, r + 1)
        cols_x = self.ix0[row] + offs
        cols_y = self.iy0[row] + offs
        w = np.outer(self.wy[row], self.wx[row]) * self.inv_norm[row]
        cc, rr = np.meshgrid(cols_x, cols_y)
        flat = rr.ravel() * self.hr_shape[1] + cc.ravel()
        keep = w.ravel() > 0.0
        return flat[keep], w.ravel()[keep]

    def to_csr(self):
        """Materialize as scipy CSR (intended for small instances/tests)."""
        import scipy.sparse as sp

        indptr = [0]
        indices = []
        data = []
        for row in range(self.rows):
            cols, w = self.row_entries(row)
            indices.append(cols)
            data.append(w)
            indptr.append(indptr[-1] + len(cols))
        indices = np.concatenate(indices) if indices else np.empty(0, dtype=np.int64)
        data = np.concatenate(data) if data else np.empty(0)
        return sp.csr_matrix((data, indices, np.asarray(indptr)),
                             shape=(self.rows, self.cols))

    def to_dense(self) -> np.ndarray:
        return np.asarray(self.to_csr().todense())

    def nbytes(self) -> int:
        return (self.ix0.nbytes + self.iy0.nbytes + self.wx.nbytes
                + self.wy.nbytes + self.inv_norm.nbytes + self.row_valid.nbytes)


def build_system_matrix(field: MotionField, psf_sigma: float,
                        hr: HrGridSpec) -> SystemMatrix:
    """Assemble the sampling operator for one frame.

    ``psf_sigma`` is the Gaussian blur width in HR pixels; the stencil is
    truncated at radius 3 sigma per axis (at most ``(2 ceil(3 sigma) + 1)^2``
    entries per row) and renormalized to unit sum over in-bounds taps.
    """
    if not (psf_sigma > 0.0 and np.isfinite(psf_sigma)):
        raise ValueError(f"psf_sigma must be positive and finite, got {psf_sigma!r}")
    xs, ys = field.mapped_positions(hr.magnification)
    ix0, iy0, wx, wy, inv_norm, row_valid = kernels.stencil_build(
        np.ascontiguousarray(xs), np.ascontiguousarray(ys),
        field.valid.ravel(), hr.height, hr.width, float(psf_sigma)
    )
    return SystemMatrix(
        frame_index=field.frame_index,
        lr_shape=field.lr_shape,
        hr_shape=(hr.height, hr.width),
        sigma=float(psf_sigma),
        ix0=ix0, iy0=iy0, wx=wx, wy=wy,
        inv_norm=inv_norm, row_valid=row_valid,
    )


def apply_forward(matrix: SystemMatrix, f: ImageGrid) -> ImageGrid:
    """Predict an LR frame from an HR image; invalid rows come back masked."""
    data = np.asarray(f.data, dtype=np.float64)
    if data.shape != matrix.hr_shape:
        raise ValueError(f"HR shape {data.shape} != matrix HR shape {matrix.hr_shape}")
    vals = kernels.stencil_forward(
        matrix.ix0, matrix.iy0, matrix.wx, matrix.wy,
        matrix.inv_norm, matrix.row_valid, np.ascontiguousarray(data)
    )
    h, w = matrix.lr_shape
    return ImageGrid(vals.reshape(h, w), mask=matrix.row_valid.reshape(h, w).copy())


def apply_adjoint(matrix: SystemMatrix, g: ImageGrid) -> ImageGrid:
    """Transpose action: scatter LR values back onto the HR grid."""
    data = np.asarray(g.data, dtype=np.float64)
    if data.shape != matrix.lr_shape:
        raise ValueError(f"LR shape {data.shape} != matrix LR shape {matrix.lr_shape}")
    vals = data.ravel()
    if g.mask is not None:
        vals = np.where(g.mask.ravel(), vals, 0.0)
    acc = kernels.stencil_adjoint(
        matrix.ix0, matrix.iy0, matrix.wx, matrix.wy,
        matrix.inv_norm, matrix.row_valid,
        np.ascontiguousarray(vals), matrix.hr_shape[0], matrix.hr_shape[1]
    )
    return ImageGrid(acc)
