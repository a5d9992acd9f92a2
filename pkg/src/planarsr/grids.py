"""Image containers and the high-resolution target grid.

An ImageGrid is a float64 raster with an optional validity mask.  The HR
grid spec ties a pixel raster to a rectangle on the module plane: pixel
(ix, iy) is centered at ``(y1_min + (ix + 0.5) d, y2_min + (iy + 0.5) d)``
with uniform spacing ``d``, so grid coordinates run from -0.5 at the left
edge of the rectangle to ``width - 0.5`` at the right edge.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_SPACING_RTOL = 1e-9


@dataclass
class ImageGrid:
    """2-D float image with optional validity mask and plane metadata.

    ``data`` is float64 with shape (height, width), nominally in [0, 1].
    ``mask`` is None (all pixels valid) or a bool array of the same shape.
    ``spacing`` and ``origin`` place the raster on the module plane where
    that is meaningful; plain sensor frames keep the defaults.
    """

    data: np.ndarray
    mask: np.ndarray | None = None
    spacing: float = 1.0
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError(f"image data must be 2-D, got shape {self.data.shape}")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != self.data.shape:
                raise ValueError(
                    f"mask shape {self.mask.shape} != data shape {self.data.shape}"
                )

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def valid_fraction(self) -> float:
        if self.mask is None:
            return 1.0
        return float(np.count_nonzero(self.mask)) / self.mask.size

    def data_with_nan(self) -> np.ndarray:
        """Copy of the data with invalid pixels replaced by NaN."""
        if self.mask is None:
            return self.data.copy()
        return np.where(self.mask, self.data, np.nan)

    def copy(self) -> "ImageGrid":
        return ImageGrid(
            self.data.copy(),
            None if self.mask is None else self.mask.copy(),
            self.spacing,
            self.origin,
        )


@dataclass(frozen=True)
class HrGridSpec:
    """Geometry of the high-resolution reconstruction raster.

    ``module_rect`` is (y1_min, y2_min, y1_max, y2_max) on the module plane.
    The rectangle must subdivide into square pixels: the horizontal and
    vertical spacings must agree to relative 1e-9.  ``magnification`` is the
    integer scale relative to the low-resolution frames (1 is a degenerate
    setting useful for identity checks).
    """

    width: int
    height: int
    module_rect: tuple[float, float, float, float]
    magnification: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"grid size must be positive, got {self.width}x{self.height}")
        if self.magnification not in (1, 2, 3, 4):
            raise ValueError(
                f"magnification must be one of 1, 2, 3, 4, got {self.magnification!r}"
            )
        y1_min, y2_min, y1_max, y2_max = (float(v) for v in self.module_rect)
        if not (y1_max > y1_min and y2_max > y2_min):
            raise ValueError(f"empty module rectangle {self.module_rect!r}")
        dx = (y1_max - y1_min) / self.width
        dy = (y2_max - y2_min) / self.height
        if abs(dx - dy) > _SPACING_RTOL * max(abs(dx), abs(dy)):
            raise ValueError(
                f"non-uniform pixel spacing: {dx!r} horizontally vs {dy!r} vertically"
            )
        object.__setattr__(self, "module_rect", (y1_min, y2_min, y1_max, y2_max))

    @property
    def spacing(self) -> float:
        return (self.module_rect[2] - self.module_rect[0]) / self.width

    @property
    def origin(self) -> tuple[float, float]:
        return (self.module_rect[0], self.module_rect[1])

    def module_to_grid(self, pts) -> np.ndarray:
        """Module-plane points (n, 2) -> fractional grid coordinates."""
        pts = np.asarray(pts, dtype=np.float64)
        d = self.spacing
        gx = (pts[..., 0] - self.module_rect[0]) / d - 0.5
        gy = (pts[..., 1] - self.module_rect[1]) / d - 0.5
        return np.stack([gx, gy], axis=-1)

    def grid_to_module(self, pts) -> np.ndarray:
        """Fractional grid coordinates (n, 2) -> module-plane points."""
        pts = np.asarray(pts, dtype=np.float64)
        d = self.spacing
        y1 = self.module_rect[0] + (pts[..., 0] + 0.5) * d
        y2 = self.module_rect[1] + (pts[..., 1] + 0.5) * d
        return np.stack([y1, y2], axis=-1)

    def pixel_centers(self) -> np.ndarray:
        """Module coordinates of all pixel centers, shape (height*width, 2), row-major."""
        ix = np.arange(self.width, dtype=np.float64)
        iy = np.arange(self.height, dtype=np.float64)
        gx, gy = np.meshgrid(ix, iy)
        return self.grid_to_module(
            np.stack([gx.ravel(), gy.ravel()], axis=1)
        )

    def contains(self, pts) -> np.ndarray:
        """True where module-plane points fall inside the rectangle."""
        pts = np.asarray(pts, dtype=np.float64)
        y1_min, y2_min, y1_max, y2_max = self.module_rect
        return (
            (pts[..., 0] >= y1_min)
            & (pts[..., 0] <= y1_max)
            & (pts[..., 1] >= y2_min)
            & (pts[..., 1] <= y2_max)
        )

    def coarser(self, octaves: int) -> "HrGridSpec":
        """Grid for ``octaves`` levels down a factor-2 pyramid.

        Dimensions are ceil-divided; the rectangle is extended on the
        max side so the pixel spacing stays exactly uniform for any size.
        """
        if octaves < 0:
            raise ValueError(f"octaves must be >= 0, got {octaves}")
        if octaves == 0:
            return self
        f = 1 << octaves
        w = max(1, -(-self.width // f))
        h = max(1, -(-self.height // f))
        d = self.spacing * f
        y1_min, y2_min = self.module_rect[0], self.module_rect[1]
        return HrGridSpec(
            width=w,
            height=h,
            module_rect=(y1_min, y2_min, y1_min + w * d, y2_min + h * d),
            magnification=self.magnification,
        )

    def empty_grid(self) -> ImageGrid:
        return ImageGrid(
            np.zeros((self.height, self.width)),
            spacing=self.spacing,
            origin=self.origin,
        )
