"""Image quality metrics and the crack-visibility proxy."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.ndimage as ndi

PSNR_CAP_DB = 99.0
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_SIGMA = 1.5
SSIM_RADIUS = 5  # 11x11 window


def _prepare(a, b, crop: int):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if crop < 0:
        raise ValueError("crop must be >= 0")
    if crop > 0:
        if 2 * crop >= min(a.shape):
            raise ValueError(f"crop {crop} leaves no pixels for {a.shape}")
        a = a[crop:-crop, crop:-crop]
        b = b[crop:-crop, crop:-crop]
    return a, b


def psnr(a, b, crop: int = 0, data_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB, capped at 99 dB for (near-)identical images."""
    a, b = _prepare(a, b, crop)
    mse = float(np.mean((a - b) ** 2))
    if mse <= 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(data_range * data_range / mse))


def ssim(a, b, crop: int = 0, data_range: float = 1.0) -> float:
    """Mean structural similarity with an 11x11 Gaussian window (sigma 1.5).

    The similarity map is cropped by the window radius before averaging so
    boundary padding does not enter the score.
    """
    a, b = _prepare(a, b, crop)
    if min(a.shape) <= 2 * SSIM_RADIUS:
        raise ValueError(f"image {a.shape} too small for an 11x11 SSIM window")
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    truncate = SSIM_RADIUS / SSIM_SIGMA

    def blur(x):
        return ndi.gaussian_filter(x, SSIM_SIGMA, truncate=truncate, mode="reflect")

    mu_a = blur(a)
    mu_b = blur(b)
    var_a = blur(a * a) - mu_a * mu_a
    var_b = blur(b * b) - mu_b * mu_b
    cov = blur(a * b) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    smap = num / den
    r = SSIM_RADIUS
    return float(smap[r:-r, r:-r].mean())


def crack_recall(crack_mask, image, threshold: float, tolerance_px: int = 1,
                 crop: int = 0) -> float:
    """Fraction of true crack pixels within ``tolerance_px`` of a detection.

    A pixel is detected when its value falls below ``threshold``; the
    detection map is dilated by a Chebyshev ball of the given radius before
    the recall is measured.  Returns NaN if the (cropped) mask has no crack
    pixels.
    """
    mask = np.asarray(crack_mask, dtype=bool)
    img = np.asarray(image, dtype=np.float64)
    if mask.shape != img.shape:
        raise ValueError(f"shape mismatch: {mask.shape} vs {img.shape}")
    if crop > 0:
        mask = mask[crop:-crop, crop:-crop]
        img = img[crop:-crop, crop:-crop]
    detected = img < threshold
    if tolerance_px > 0:
        size = 2 * tolerance_px + 1
        detected = ndi.binary_dilation(detected, np.ones((size, size), dtype=bool))
    n = int(mask.sum())
    if n == 0:
        return float("nan")
    return float(np.count_nonzero(detected & mask)) / n


@dataclass
class MetricsRow:
    name: str
    psnr_db: float
    ssim: float
    crack_recall: float | None = None


@dataclass
class MetricsReport:
    """Evaluation table with the border crop applied to every metric."""

    border_crop: int
    rows: list[MetricsRow]

    def as_dict(self) -> dict:
        return {
            "border_crop": self.border_crop,
            "rows": [
                {
                    "name": r.name,
                    "psnr_db": r.psnr_db,
                    "ssim": r.ssim,
                    "crack_recall": r.crack_recall,
                }
                for r in self.rows
            ],
        }

    def format_table(self) -> str:
        lines = [f"{'method':<16} {'psnr_db':>8} {'ssim':>7} {'crack_recall':>13}"]
        for r in self.rows:
            recall = "-" if r.crack_recall is None else f"{r.crack_recall:.3f}"
            lines.append(
                f"{r.name:<16} {r.psnr_db:>8.2f} {r.ssim:>7.4f} {recall:>13}"
            )
        return "\n".join(lines)
