"""Synthetic module scenes and simulated frame sequences.

The scene mimics an electroluminescence-style module image: a grid of
bright cell interiors separated by dark gaps, dark busbar stripes inside
each cell, smooth interior texture, and thin dark crack polylines drawn as
constrained random walks.  Sequences are rendered through exactly the same
observation code path the solver inverts (motion field, Gaussian stencil
matrix, forward apply), so a reconstruction with the true geometry faces no
model mismatch other than noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.ndimage as ndi

from .errors import ConfigError
from .geometry import CameraModel, Homography, forward_map_points
from .grids import HrGridSpec, ImageGrid
from .observation import apply_forward, build_motion_field, build_system_matrix
from .registration import CorrespondenceSet, RegistrationResult

# Layout constants as fractions of one cell.
GAP_HALFWIDTH = 0.02
BUSBAR_HALFWIDTH = 0.012
# Cracks keep at least this many HR pixels away from gaps and busbars so the
# detection proxy cannot be contaminated by other dark structures.
CRACK_CLEARANCE_PX = 3.0


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of the synthetic module scene."""

    hr: HrGridSpec
    cells: tuple[int, int] = (4, 5)  # (rows, cols)
    busbar_count: int = 3
    crack_count: int = 6
    texture_amplitude: float = 0.05
    cell_level: float = 0.85
    gap_level: float = 0.05
    busbar_level: float = 0.3
    crack_level: float = 0.15
    seed: int = 0

    def __post_init__(self):
        if self.cells[0] < 1 or self.cells[1] < 1:
            raise ValueError(f"cells must be >= 1 per axis, got {self.cells}")
        if self.busbar_count < 0 or self.crack_count < 0:
            raise ValueError("busbar_count and crack_count must be >= 0")
        if self.texture_amplitude < 0.0:
            raise ValueError("texture_amplitude must be >= 0")

    @property
    def crack_threshold(self) -> float:
        """Midpoint between cell interior and crack level (detection proxy)."""
        return 0.5 * (self.cell_level + self.crack_level)


@dataclass
class Scene:
    """Ground-truth HR image plus the exact crack pixel mask."""

    image: ImageGrid
    crack_mask: np.ndarray


@dataclass(frozen=True)
class PoseJitter:
    """Per-frame pose perturbation ranges around the nominal fronto-parallel pose."""

    translation: float = 0.02  # fraction of module extent per axis
    rotation_deg: float = 2.0
    tilt: float = 0.05  # max perspective foreshortening across the module

    def __post_init__(self):
        if self.translation < 0 or self.rotation_deg < 0 or self.tilt < 0:
            raise ValueError("jitter ranges must be >= 0")


@dataclass(frozen=True)
class NoiseParams:
    """Sensor noise: additive Gaussian plus optional salt-and-pepper."""

    gaussian_sigma: float = 0.005
    impulse_fraction: float = 0.0

    def __post_init__(self):
        if self.gaussian_sigma < 0.0:
            raise ValueError("gaussian_sigma must be >= 0")
        if not (0.0 <= self.impulse_fraction <= 1.0):
            raise ValueError("impulse_fraction must be in [0, 1]")


@dataclass(frozen=True)
class AcquisitionSpec:
    """Simulated acquisition: camera, pose jitter, blur and noise."""

    n_frames: int = 20
    lr_shape: tuple[int, int] = (512, 640)  # (height, width)
    camera: CameraModel = field(
        default_factory=lambda: CameraModel(fx=640.0, fy=640.0, cx=319.5, cy=255.5,
                                            kappa=0.05)
    )
    jitter: PoseJitter = field(default_factory=PoseJitter)
    psf_sigma: float = 1.2  # HR pixels
    noise: NoiseParams = field(default_factory=NoiseParams)
    margin: float = 0.08  # frame fraction kept clear around the module
    max_pose_attempts: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")
        if self.psf_sigma <= 0.0:
            raise ValueError("psf_sigma must be > 0")
        if not (0.0 <= self.margin < 0.5):
            raise ValueError("margin must be in [0, 0.5)")


@dataclass
class SequenceData:
    """A rendered sequence with its exact generating geometry."""

    frames: list[ImageGrid]
    truth: RegistrationResult
    correspondences: list[CorrespondenceSet]
    hr: HrGridSpec
    psf_sigma: float


def _texture(rng, shape, sigma_px, amplitude):
    noise = rng.standard_normal(shape)
    smooth = ndi.gaussian_filter(noise, sigma_px, mode="reflect")
    std = smooth.std()
    if std <= 0.0 or amplitude == 0.0:
        return np.zeros(shape)
    return smooth * (amplitude / std)


def _crack_bands(busbar_count: int) -> list[tuple[float, float]]:
    """Horizontal intervals (cell fraction) between busbars/gap edges."""
    positions = [(j + 1) / (busbar_count + 1) for j in range(busbar_count)]
    los = [GAP_HALFWIDTH] + [p + BUSBAR_HALFWIDTH for p in positions]
    his = [p - BUSBAR_HALFWIDTH for p in positions] + [1.0 - GAP_HALFWIDTH]
    return [(lo, hi) for lo, hi in zip(los, his) if hi > lo]


def _walk_crack(rng, rect, n_steps: int, step: float = 1.0):
    """Random-walk polyline confined to a pixel rectangle (x0, y0, x1, y1)."""
    x0, y0, x1, y1 = rect
    x = rng.uniform(x0, x1)
    y = rng.uniform(y0, y1)
    heading = rng.uniform(0.0, 2.0 * math.pi)
    pts = [(x, y)]
    for _ in range(n_steps):
        heading += rng.normal(0.0, 0.35)
        nx = x + step * math.cos(heading)
        ny = y + step * math.sin(heading)
        if not (x0 <= nx <= x1 and y0 <= ny <= y1):
            heading += math.pi  # bounce back into the band
            nx = min(max(x + step * math.cos(heading), x0), x1)
            ny = min(max(y + step * math.sin(heading), y0), y1)
        x, y = nx, ny
        pts.append((x, y))
    return pts


def _rasterize_polyline(mask: np.ndarray, pts) -> None:
    """Mark the 1-px-wide trace of a polyline in a boolean raster."""
    h, w = mask.shape
    for (ax, ay), (bx, by) in zip(pts[:-1], pts[1:]):
        length = math.hypot(bx - ax, by - ay)
        n = max(2, int(math.ceil(length / 0.5)) + 1)
        for t in np.linspace(0.0, 1.0, n):
            cx = int(round(ax + t * (bx - ax)))
            cy = int(round(ay + t * (by - ay)))
            if 0 <= cx < w and 0 <= cy < h:
                mask[cy, cx] = True


def generate_scene(spec: SceneSpec) -> Scene:
    """Render the deterministic synthetic module for ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    hr = spec.hr
    rows, cols = spec.cells
    w, h = hr.width, hr.height
    y1_min, y2_min, y1_max, y2_max = hr.module_rect
    cell_w = (y1_max - y1_min) / cols
    cell_h = (y2_max - y2_min) / rows
    cell_px = min(cell_w, cell_h) / hr.spacing

    centers = hr.pixel_centers()
    fu = ((centers[:, 0] - y1_min) / cell_w) % 1.0
    fv = ((centers[:, 1] - y2_min) / cell_h) % 1.0
    fu = fu.reshape(h, w)
    fv = fv.reshape(h, w)

    in_gap = (
        (fu < GAP_HALFWIDTH) | (fu > 1.0 - GAP_HALFWIDTH)
        | (fv < GAP_HALFWIDTH) | (fv > 1.0 - GAP_HALFWIDTH)
    )
    in_busbar = np.zeros_like(in_gap)
    for j in range(spec.busbar_count):
        p = (j + 1) / (spec.busbar_count + 1)
        in_busbar |= np.abs(fu - p) < BUSBAR_HALFWIDTH
    in_busbar &= ~in_gap

    image = np.full((h, w), spec.cell_level)
    if spec.texture_amplitude > 0.0:
        image += _texture(rng, (h, w), max(1.0, cell_px / 8.0),
                          spec.texture_amplitude)
    image[in_busbar] = spec.busbar_level
    image[in_gap] = spec.gap_level

    crack_mask = np.zeros((h, w), dtype=bool)
    if spec.crack_count > 0:
        bands = _crack_bands(spec.busbar_count)
        margin_u = CRACK_CLEARANCE_PX * hr.spacing / cell_w
        margin_v = CRACK_CLEARANCE_PX * hr.spacing / cell_h
        for _ in range(spec.crack_count):
            ci = rng.integers(0, cols)
            ri = rng.integers(0, rows)
            lo, hi = bands[rng.integers(0, len(bands))]
            u_lo, u_hi = lo + margin_u, hi - margin_u
            v_lo = GAP_HALFWIDTH + margin_v
            v_hi = 1.0 - GAP_HALFWIDTH - margin_v
            if u_hi <= u_lo or v_hi <= v_lo:
                continue  # band too narrow at this resolution
            # convert the band rectangle to HR pixel coordinates
            x_lo = ((ci + u_lo) * cell_w) / hr.spacing - 0.5
            x_hi = ((ci + u_hi) * cell_w) / hr.spacing - 0.5
            y_lo = ((ri + v_lo) * cell_h) / hr.spacing - 0.5
            y_hi = ((ri + v_hi) * cell_h) / hr.spacing - 0.5
            n_steps = int(rng.integers(40, 140) * max(1.0, cell_px / 200.0))
            pts = _walk_crack(rng, (x_lo, y_lo, x_hi, y_hi), n_steps)
            _rasterize_polyline(crack_mask, pts)

    image[crack_mask] = spec.crack_level
    np.clip(image, 0.0, 1.0, out=image)
    return Scene(
        image=ImageGrid(image, spacing=hr.spacing, origin=hr.origin),
        crack_mask=crack_mask,
    )


def _nominal_homography(hr: HrGridSpec, lr_shape, cam: CameraModel,
                        margin: float) -> np.ndarray:
    """Fronto-parallel pose centering the module with the given margin."""
    y1_min, y2_min, y1_max, y2_max = hr.module_rect
    half_w = 0.5 * (y1_max - y1_min)
    half_h = 0.5 * (y2_max - y2_min)
    lr_h, lr_w = lr_shape
    usable_x = 0.5 * lr_w * (1.0 - 2.0 * margin) / cam.fx
    usable_y = 0.5 * lr_h * (1.0 - 2.0 * margin) / cam.fy
    s0 = min(usable_x / half_w, usable_y / half_h)
    c1 = y1_min + half_w
    c2 = y2_min + half_h
    return np.array([
        [s0, 0.0, -s0 * c1],
        [0.0, s0, -s0 * c2],
        [0.0, 0.0, 1.0],
    ])


def _jittered_pose(rng, h0, hr, jitter: PoseJitter) -> Homography:
    y1_min, y2_min, y1_max, y2_max = hr.module_rect
    ext_w = y1_max - y1_min
    ext_h = y2_max - y2_min
    c1 = y1_min + 0.5 * ext_w
    c2 = y2_min + 0.5 * ext_h

    t1 = rng.uniform(-1.0, 1.0) * jitter.translation * ext_w
    t2 = rng.uniform(-1.0, 1.0) * jitter.translation * ext_h
    th = math.radians(rng.uniform(-1.0, 1.0) * jitter.rotation_deg)
    p1 = rng.uniform(-1.0, 1.0) * jitter.tilt / ext_w
    p2 = rng.uniform(-1.0, 1.0) * jitter.tilt / ext_h

    t_c = np.array([[1.0, 0.0, c1], [0.0, 1.0, c2], [0.0, 0.0, 1.0]])
    t_ci = np.array([[1.0, 0.0, -c1], [0.0, 1.0, -c2], [0.0, 0.0, 1.0]])
    rot = np.array([
        [math.cos(th), -math.sin(th), 0.0],
        [math.sin(th), math.cos(th), 0.0],
        [0.0, 0.0, 1.0],
    ])
    persp = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [p1, p2, 1.0]])
    trans = np.array([[1.0, 0.0, t1], [0.0, 1.0, t2], [0.0, 0.0, 1.0]])
    return Homography(h0 @ trans @ t_c @ rot @ persp @ t_ci)


def default_correspondence_points(hr: HrGridSpec,
                                  grid: tuple[int, int] = (5, 6)) -> np.ndarray:
    """Landmark grid on the module rectangle (defaults to 4x5 cell corners)."""
    y1_min, y2_min, y1_max, y2_max = hr.module_rect
    ys = np.linspace(y2_min, y2_max, grid[0])
    xs = np.linspace(y1_min, y1_max, grid[1])
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def generate_sequence(scene: Scene, hr: HrGridSpec,
                      acq: AcquisitionSpec,
                      corr_points: np.ndarray | None = None) -> SequenceData:
    """Render ``acq.n_frames`` observations of the scene.

    Poses are resampled (up to ``max_pose_attempts``) until every module
    corner and landmark stays inside the frame.  Frames are produced by the
    same motion-field/system-matrix path used for reconstruction; pixels
    not observing the module are background zero.  Noise is applied after
    rendering and is not clipped, so its statistics stay exact.
    """
    rng = np.random.default_rng(acq.seed)
    lr_h, lr_w = acq.lr_shape
    cam = acq.camera
    h0 = _nominal_homography(hr, acq.lr_shape, cam, acq.margin)
    if corr_points is None:
        corr_points = default_correspondence_points(hr)
    y1_min, y2_min, y1_max, y2_max = hr.module_rect
    corners = np.array([
        [y1_min, y2_min], [y1_max, y2_min], [y1_max, y2_max], [y1_min, y2_max],
    ])
    checkpoints = np.concatenate([corners, corr_points], axis=0)

    homs: list[Homography] = []
    for _ in range(acq.n_frames):
        for _attempt in range(acq.max_pose_attempts):
            hom = _jittered_pose(rng, h0, hr, acq.jitter)
            uv, ok = forward_map_points(checkpoints, hom, cam)
            if np.all(ok) and np.all(
                (uv[:, 0] >= 0.0) & (uv[:, 0] <= lr_w - 1.0)
                & (uv[:, 1] >= 0.0) & (uv[:, 1] <= lr_h - 1.0)
            ):
                homs.append(hom)
                break
        else:
            raise ConfigError(
                f"could not sample a pose keeping the module visible in "
                f"{acq.max_pose_attempts} attempts; reduce jitter or margin"
            )

    nan = np.full(acq.n_frames, np.nan)
    truth = RegistrationResult(homs, cam, nan.copy(), nan.copy(), acq.lr_shape)

    frames: list[ImageGrid] = []
    sets: list[CorrespondenceSet] = []
    for i in range(acq.n_frames):
        fieldi = build_motion_field(i, truth, hr, acq.lr_shape)
        mat = build_system_matrix(fieldi, acq.psf_sigma, hr)
        clean = apply_forward(mat, scene.image)
        data = np.where(clean.mask, clean.data, 0.0)
        if acq.noise.gaussian_sigma > 0.0:
            data = data + rng.normal(0.0, acq.noise.gaussian_sigma, data.shape)
        if acq.noise.impulse_fraction > 0.0:
            k = int(round(acq.noise.impulse_fraction * data.size))
            if k > 0:
                idx = rng.choice(data.size, size=k, replace=False)
                data.ravel()[idx] = rng.integers(0, 2, size=k).astype(np.float64)
        frames.append(ImageGrid(data))

        uv, ok = forward_map_points(corr_points, homs[i], cam)
        if not np.all(ok):
            raise ConfigError("correspondence landmark maps to infinity")
        sets.append(CorrespondenceSet(i, corr_points.copy(), uv))

    return SequenceData(frames=frames, truth=truth, correspondences=sets,
                        hr=hr, psf_sigma=acq.psf_sigma)


def perturb_correspondences(sets: list[CorrespondenceSet], sigma: float,
                            rng=None) -> list[CorrespondenceSet]:
    """Add isotropic Gaussian pixel noise to correspondence observations.

    ``sigma`` must be >= 0; 0 returns an exact copy.  ``rng`` is a seed or
    numpy Generator (defaults to seed 0).
    """
    if sigma < 0.0:
        raise ValueError(f"sigma must be >= 0, got {sigma!r}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    out = []
    for s in sets:
        noise = rng.normal(0.0, sigma, s.pixel_points.shape) if sigma > 0.0 else 0.0
        out.append(CorrespondenceSet(
            s.frame_index, s.module_points.copy(), s.pixel_points + noise
        ))
    return out
