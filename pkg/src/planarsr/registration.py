"""Geometric and photometric registration of frame sequences.

Initialization is point-based: per-frame homographies by normalized DLT,
shared intrinsics by Zhang-style closed-form calibration from three or more
views, distortion starting at zero.  Refinement is photometric: a mean
template is built on the module raster, each frame's homography is polished
by Levenberg-Marquardt on the warped-template mismatch, and a final joint
pass refines the shared distortion coefficient.  A coarse-to-fine pyramid
wraps the alternation so the basin of attraction covers several pixels of
initial error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.ndimage as ndi

from . import kernels
from .errors import (
    DegenerateConfigurationError,
    DivergenceError,
    EmptyOverlapError,
    IllConditionedError,
    InsufficientViewsError,
    SingularProjectionError,
)
from .geometry import (
    HOMOGENEOUS_EPS,
    CameraModel,
    Homography,
    forward_map_points,
    undistort_points,
)
from .grids import HrGridSpec, ImageGrid

# Singular-value ratio of the DLT system above which the solution is ambiguous.
_DLT_RANK_RTOL = 1e-8
# Condition number of the calibration system above which we refuse to extract.
_ZHANG_COND_LIMIT = 1e12
_KAPPA_BOUND = 0.5


def _as_grids(frames) -> list[ImageGrid]:
    """Accept plain arrays wherever a frame list is expected."""
    return [f if isinstance(f, ImageGrid) else ImageGrid(np.asarray(f, dtype=np.float64))
            for f in frames]


@dataclass
class CorrespondenceSet:
    """Point matches for one frame: module-plane points and their pixels."""

    frame_index: int
    module_points: np.ndarray
    pixel_points: np.ndarray

    def __post_init__(self):
        self.module_points = np.asarray(self.module_points, dtype=np.float64)
        self.pixel_points = np.asarray(self.pixel_points, dtype=np.float64)
        if self.module_points.ndim != 2 or self.module_points.shape[1] != 2:
            raise ValueError(f"module_points must be (n, 2), got {self.module_points.shape}")
        if self.module_points.shape != self.pixel_points.shape:
            raise ValueError("module_points and pixel_points must have equal shapes")
        if len(self.module_points) == 0:
            raise ValueError("correspondence set must not be empty")

    def __len__(self) -> int:
        return len(self.module_points)

    def scaled_pixels(self, factor: float) -> "CorrespondenceSet":
        return CorrespondenceSet(
            self.frame_index, self.module_points.copy(), self.pixel_points * factor
        )


@dataclass
class RegistrationResult:
    """Estimated acquisition geometry for a frame sequence.

    ``residuals`` is the per-frame RMS photometric residual in intensity
    units (NaN until a photometric pass has run); ``reprojection_rms`` the
    per-frame RMS reprojection error in LR pixels against whatever
    correspondences were supplied (NaN if none were).
    """

    homographies: list[Homography]
    camera: CameraModel
    residuals: np.ndarray
    reprojection_rms: np.ndarray
    lr_shape: tuple[int, int] | None = None

    def __post_init__(self):
        self.residuals = np.asarray(self.residuals, dtype=np.float64)
        self.reprojection_rms = np.asarray(self.reprojection_rms, dtype=np.float64)
        n = len(self.homographies)
        if self.residuals.shape != (n,) or self.reprojection_rms.shape != (n,):
            raise ValueError("diagnostic arrays must have one entry per frame")

    @property
    def n_frames(self) -> int:
        return len(self.homographies)


@dataclass(frozen=True)
class RefineOptions:
    """Levenberg-Marquardt controls for photometric refinement.

    ``max_lm_pixels`` bounds the photometric residual count per frame: above
    it, pixels enter the LM on a regular stride grid.  Pose and distortion
    have under ten parameters each, so even heavily strided frames remain
    overdetermined by orders of magnitude; the cap only bounds runtime.
    """

    max_iterations: int = 50
    cost_tol: float = 1e-8
    diff_step: float = 1e-6
    max_escalations: int = 5
    refine_kappa: bool = True
    huber_delta: float | None = None
    max_lm_pixels: int | None = None


@dataclass(frozen=True)
class MultiscaleOptions:
    """Coarse-to-fine schedule: pyramid depth and alternations per level.

    ``full_res_passes`` overrides ``passes_per_level`` at the finest level,
    where template building and refinement are an order of magnitude more
    expensive and the estimate is already near its fixed point.
    """

    levels: int = 3
    passes_per_level: int = 2
    full_res_passes: int = 1
    point_alternations: int = 5
    refine: RefineOptions = field(default_factory=RefineOptions)


def _normalizing_transform(pts: np.ndarray) -> np.ndarray:
    """Hartley normalization: centroid to origin, mean distance sqrt(2)."""
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    if d <= 0.0:
        raise DegenerateConfigurationError("correspondence points are coincident")
    s = math.sqrt(2.0) / d
    return np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])


def _apply_h(t: np.ndarray, pts: np.ndarray) -> np.ndarray:
    x = t[0, 0] * pts[:, 0] + t[0, 1] * pts[:, 1] + t[0, 2]
    y = t[1, 0] * pts[:, 0] + t[1, 1] * pts[:, 1] + t[1, 2]
    s = t[2, 0] * pts[:, 0] + t[2, 1] * pts[:, 1] + t[2, 2]
    return np.stack([x / s, y / s], axis=1)


def estimate_homography_dlt(module_points, pixel_points) -> Homography:
    """Direct linear transform with Hartley normalization.

    Needs at least 4 correspondences in general position; collinear or
    otherwise ambiguous configurations raise DegenerateConfigurationError.
    """
    src = np.asarray(module_points, dtype=np.float64)
    dst = np.asarray(pixel_points, dtype=np.float64)
    if src.ndim != 2 or src.shape[1] != 2 or src.shape != dst.shape:
        raise ValueError(f"expected matching (n, 2) arrays, got {src.shape} and {dst.shape}")
    n = len(src)
    if n < 4:
        raise DegenerateConfigurationError(
            f"homography estimation needs at least 4 correspondences, got {n}"
        )
    if not (np.all(np.isfinite(src)) and np.all(np.isfinite(dst))):
        raise ValueError("correspondences must be finite")

    t_src = _normalizing_transform(src)
    t_dst = _normalizing_transform(dst)
    sp = _apply_h(t_src, src)
    dp = _apply_h(t_dst, dst)

    a = np.zeros((2 * n, 9))
    a[0::2, 0] = sp[:, 0]
    a[0::2, 1] = sp[:, 1]
    a[0::2, 2] = 1.0
    a[0::2, 6] = -dp[:, 0] * sp[:, 0]
    a[0::2, 7] = -dp[:, 0] * sp[:, 1]
    a[0::2, 8] = -dp[:, 0]
    a[1::2, 3] = sp[:, 0]
    a[1::2, 4] = sp[:, 1]
    a[1::2, 5] = 1.0
    a[1::2, 6] = -dp[:, 1] * sp[:, 0]
    a[1::2, 7] = -dp[:, 1] * sp[:, 1]
    a[1::2, 8] = -dp[:, 1]

    _, sv, vt = np.linalg.svd(a)
    if sv[-2] <= _DLT_RANK_RTOL * sv[0]:
        raise DegenerateConfigurationError(
            "correspondences do not determine a unique homography (collinear?)"
        )
    h_norm = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t_dst) @ h_norm @ t_src
    try:
        return Homography(h)
    except SingularProjectionError as exc:
        raise DegenerateConfigurationError(
            f"estimated homography is singular: {exc}"
        ) from exc


def _zhang_v(h: np.ndarray, i: int, j: int) -> np.ndarray:
    return np.array(
        [
            h[0, i] * h[0, j],
            h[0, i] * h[1, j] + h[1, i] * h[0, j],
            h[1, i] * h[1, j],
            h[2, i] * h[0, j] + h[0, i] * h[2, j],
            h[2, i] * h[1, j] + h[1, i] * h[2, j],
            h[2, i] * h[2, j],
        ]
    )


def zhang_initialize(sets: list[CorrespondenceSet],
                     lr_shape: tuple[int, int] | None = None) -> RegistrationResult:
    """Closed-form intrinsics and per-frame homographies from point matches.

    Per-frame DLT homographies constrain the image of the absolute conic;
    the intrinsic matrix follows from its Cholesky-like decomposition.
    Distortion is initialized to zero.  Needs >= 3 views; raises
    IllConditionedError when the constraint system cannot be trusted.
    """
    if len(sets) < 3:
        raise InsufficientViewsError(
            f"intrinsic initialization needs >= 3 views, got {len(sets)}"
        )
    sets = sorted(sets, key=lambda s: s.frame_index)
    if [s.frame_index for s in sets] != list(range(len(sets))):
        raise ValueError("correspondence sets must cover frames 0..N-1 exactly once")
    dlt = [estimate_homography_dlt(s.module_points, s.pixel_points) for s in sets]

    v = np.zeros((2 * len(dlt), 6))
    for i, hom in enumerate(dlt):
        h = hom.matrix
        v[2 * i] = _zhang_v(h, 0, 1)
        v[2 * i + 1] = _zhang_v(h, 0, 0) - _zhang_v(h, 1, 1)
    _, sv, vt = np.linalg.svd(v)
    # The conic parameters are the null direction of a homogeneous system:
    # a tiny smallest singular value means exact data, not trouble.  The
    # system is untrustworthy when the null direction is ambiguous, i.e.
    # when the second-smallest singular value also collapses.
    if sv[-2] <= 0.0 or sv[0] / sv[-2] > _ZHANG_COND_LIMIT:
        raise IllConditionedError(
            "calibration constraints are rank deficient or too ill-conditioned"
        )
    b11, b12, b22, b13, b23, b33 = vt[-1]
    if b11 < 0.0:
        b11, b12, b22, b13, b23, b33 = -b11, -b12, -b22, -b13, -b23, -b33

    den = b11 * b22 - b12 * b12
    if b11 <= 0.0 or den <= 0.0:
        raise IllConditionedError("recovered conic is not positive definite")
    v0 = (b12 * b13 - b11 * b23) / den
    lam = b33 - (b13 * b13 + v0 * (b12 * b13 - b11 * b23)) / b11
    if lam <= 0.0:
        raise IllConditionedError("recovered conic is not positive definite")
    fx = math.sqrt(lam / b11)
    fy = math.sqrt(lam * b11 / den)
    skew = -b12 * fx * fx * fy / lam
    u0 = skew * v0 / fy - b13 * fx * fx / lam

    cam = CameraModel(fx=fx, fy=fy, cx=u0, cy=v0, skew=skew, kappa=0.0)
    k_inv = np.linalg.inv(cam.matrix)
    homs = [Homography(k_inv @ h.matrix) for h in dlt]
    nan = np.full(len(homs), np.nan)
    reg = RegistrationResult(homs, cam, nan.copy(), nan.copy(), lr_shape)
    reg.reprojection_rms = reprojection_rms(reg, sets)
    return reg


def reprojection_rms(reg: RegistrationResult, sets: list[CorrespondenceSet]) -> np.ndarray:
    """Per-frame RMS pixel error of the registered forward map on the matches."""
    out = np.full(reg.n_frames, np.nan)
    for s in sets:
        uv, ok = forward_map_points(s.module_points, reg.homographies[s.frame_index],
                                    reg.camera)
        if not np.all(ok):
            out[s.frame_index] = np.inf
            continue
        d2 = ((uv - s.pixel_points) ** 2).sum(axis=1)
        out[s.frame_index] = math.sqrt(float(d2.mean()))
    return out


def _grid_spec_of(template: ImageGrid) -> HrGridSpec:
    """Recover the module-plane raster a template lives on."""
    h, w = template.shape
    d = template.spacing
    ox, oy = template.origin
    return HrGridSpec(
        width=w, height=h,
        module_rect=(ox, oy, ox + w * d, oy + h * d),
        magnification=1,
    )


def build_template(frames: list[ImageGrid], reg: RegistrationResult,
                   hr: HrGridSpec) -> ImageGrid:
    """Mean of all frames inversely warped onto the module raster.

    Each HR pixel center is mapped into every frame and sampled bilinearly;
    out-of-frame samples are excluded.  Pixels no frame observes are
    masked; if more than half the raster is unobserved the overlap is
    considered empty and an EmptyOverlapError is raised.
    """
    frames = _as_grids(frames)
    if len(frames) == 0:
        raise EmptyOverlapError("no frames to build a template from")
    if len(frames) != reg.n_frames:
        raise ValueError(f"{len(frames)} frames vs {reg.n_frames} registered poses")
    centers = hr.pixel_centers()
    acc = np.zeros(centers.shape[0])
    cnt = np.zeros(centers.shape[0], dtype=np.int64)
    for i, frame in enumerate(frames):
        uv, ok = forward_map_points(centers, reg.homographies[i], reg.camera)
        uv = np.nan_to_num(uv, nan=-1e9)
        vals, valid = kernels.bilinear_sample(
            np.ascontiguousarray(frame.data, dtype=np.float64),
            np.ascontiguousarray(uv[:, 0]), np.ascontiguousarray(uv[:, 1])
        )
        valid = valid & ok
        acc[valid] += vals[valid]
        cnt[valid] += 1
    observed = cnt > 0
    if np.count_nonzero(observed) < 0.5 * observed.size:
        raise EmptyOverlapError(
            f"frames observe only {np.count_nonzero(observed)} of {observed.size} "
            "template pixels"
        )
    data = np.where(observed, acc / np.maximum(cnt, 1), 0.0)
    return ImageGrid(
        data.reshape(hr.height, hr.width),
        mask=observed.reshape(hr.height, hr.width),
        spacing=hr.spacing,
        origin=hr.origin,
    )


class _FrameSampler:
    """Caches the distortion-independent part of the LR-to-module warp.

    For fixed intrinsics the chain per LR pixel is: normalize (fixed),
    undistort (depends only on kappa, cached), apply the inverse
    homography (cheap, per evaluation).  This keeps the cubic solve out of
    the Levenberg-Marquardt inner loop.
    """

    def __init__(self, lr_shape: tuple[int, int], cam: CameraModel,
                 stride: int = 1):
        h, w = lr_shape
        uu, vv = np.meshgrid(np.arange(0, w, stride, dtype=np.float64),
                             np.arange(0, h, stride, dtype=np.float64))
        uv = np.stack([uu.ravel(), vv.ravel()], axis=1)
        self.stride = stride
        self.xd = cam.normalized_from_pixel(uv)
        self._kappa = None
        self._xu = None
        self._xu_x = None
        self._xu_y = None
        self._uvalid = None

    def subsample(self, frame: np.ndarray) -> np.ndarray:
        """The frame pixels this sampler evaluates, flattened."""
        return np.ascontiguousarray(
            frame[::self.stride, ::self.stride].ravel(), dtype=np.float64)

    def undistorted(self, kappa: float):
        if self._kappa is None or kappa != self._kappa:
            xu, ok = undistort_points(self.xd, kappa)
            self._xu = np.nan_to_num(xu, nan=0.0)
            self._xu_x = np.ascontiguousarray(self._xu[:, 0])
            self._xu_y = np.ascontiguousarray(self._xu[:, 1])
            self._uvalid = ok
            self._kappa = kappa
        return self._xu, self._uvalid

    def warp_template(self, tmpl_nan: np.ndarray, spec: HrGridSpec,
                      hom: Homography, kappa: float):
        """Sample the template at every LR pixel; returns (values, valid).

        Strict bilinear validity makes the rectangle-containment check
        redundant: the valid sampling region [0, W-1] lies inside the
        rect's grid image [-0.5, W-0.5].
        """
        xu, ok = self.undistorted(kappa)
        d = spec.spacing
        return kernels.warp_sample(
            tmpl_nan, self._xu_x, self._xu_y, ok, hom.inverse().matrix,
            1.0 / d, -spec.module_rect[0] / d - 0.5,
            1.0 / d, -spec.module_rect[1] / d - 0.5,
            HOMOGENEOUS_EPS,
        )


def _tangent_basis(h0: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the 8-dim complement of vec(h0): canonical scale
    is fixed, so motion along vec(h0) is a no-op and is excluded."""
    v0 = h0.ravel() / np.linalg.norm(h0)
    q, _ = np.linalg.qr(np.concatenate([v0[:, None], np.eye(9)], axis=1))
    return q[:, 1:9]


def _lm_minimize(residual_fn, x0: np.ndarray, opts: RefineOptions,
                 step_scale) -> tuple[np.ndarray, float, list[float]]:
    """Dense LM with Marquardt diagonal scaling and central differences.

    ``residual_fn`` returns a flat residual vector or None for an
    infeasible trial.  Returns the best parameters, their cost and the
    accepted-cost history (non-increasing by construction).  Raises
    DivergenceError only if a cost evaluates non-finite.
    """
    x = x0.copy()
    r = residual_fn(x)
    if r is None:
        raise DivergenceError("initial refinement parameters are infeasible")
    cost = float(r @ r)
    if not np.isfinite(cost):
        raise DivergenceError("photometric cost is non-finite")
    history = [cost]
    mu = 1e-3
    n = len(x)

    for _ in range(opts.max_iterations):
        jac = np.zeros((len(r), n))
        for j in range(n):
            h = opts.diff_step * step_scale[j]
            rp = residual_fn(x + h * _unit(n, j))
            rm = residual_fn(x - h * _unit(n, j))
            if rp is None or rm is None:
                continue
            jac[:, j] = (rp - rm) / (2.0 * h)
        g = jac.T @ r
        a = jac.T @ jac
        diag = np.clip(np.diag(a), 1e-12, None)

        accepted = False
        rel_drop = 0.0
        for _esc in range(opts.max_escalations):
            try:
                step = np.linalg.solve(a + mu * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                step = None
            c_new = np.inf
            r_new = None
            if step is not None and np.all(np.isfinite(step)):
                r_new = residual_fn(x + step)
                if r_new is not None:
                    c_new = float(r_new @ r_new)
            if np.isfinite(c_new) and c_new < cost:
                x = x + step
                rel_drop = (cost - c_new) / max(cost, 1e-300)
                cost = c_new
                r = r_new
                history.append(cost)
                mu = max(mu / 3.0, 1e-12)
                accepted = True
                break
            mu *= 10.0
        if not accepted:
            break
        if rel_drop <= opts.cost_tol:
            break
    return x, cost, history


def _unit(n: int, j: int) -> np.ndarray:
    e = np.zeros(n)
    e[j] = 1.0
    return e


def refine_points(sets: list[CorrespondenceSet], initial: RegistrationResult,
                  opts: RefineOptions | None = None,
                  alternations: int = 5) -> RegistrationResult:
    """Joint reprojection-error refinement of poses, intrinsics and distortion.

    Alternates per-frame pose LM with a shared-camera LM (fx, fy, cx, cy,
    skew, kappa) on the point matches.  The camera model has an exact gauge
    freedom (scaling fx and fy by sigma while moving kappa to kappa*sigma^2
    and rescaling the poses leaves every pixel fixed), so individual
    intrinsics are recovered only up to that family; the composite
    module-to-pixel map, which is all later stages use, is determined.
    With ``opts.refine_kappa`` false the distortion coefficient stays
    frozen while poses and pinhole intrinsics still refine.
    """
    opts = opts or RefineOptions()
    sets = sorted(sets, key=lambda s: s.frame_index)
    if [s.frame_index for s in sets] != list(range(len(sets))):
        raise ValueError("correspondence sets must cover frames 0..N-1 exactly once")
    cam = initial.camera
    homs = list(initial.homographies)
    if len(homs) != len(sets):
        raise ValueError(f"{len(sets)} correspondence sets vs {len(homs)} poses")

    def pose_residual(s: CorrespondenceSet, h0: np.ndarray, basis: np.ndarray,
                      cam: CameraModel):
        def fn(delta: np.ndarray):
            try:
                hom = Homography((h0.ravel() + basis @ delta).reshape(3, 3))
            except SingularProjectionError:
                return None
            uv, ok = forward_map_points(s.module_points, hom, cam)
            if not np.all(ok):
                return None
            return (uv - s.pixel_points).ravel()
        return fn

    def camera_residual(x: np.ndarray):
        kappa = float(x[5]) if len(x) == 6 else cam.kappa
        if abs(kappa) > _KAPPA_BOUND or x[0] <= 0.0 or x[1] <= 0.0:
            return None
        cam_t = CameraModel(fx=x[0], fy=x[1], cx=x[2], cy=x[3],
                            skew=x[4], kappa=kappa)
        parts = []
        for i, s in enumerate(sets):
            uv, ok = forward_map_points(s.module_points, homs[i], cam_t)
            if not np.all(ok):
                return None
            parts.append((uv - s.pixel_points).ravel())
        return np.concatenate(parts)

    for _ in range(max(0, alternations)):
        for i, s in enumerate(sets):
            h0 = homs[i].matrix
            basis = _tangent_basis(h0)
            delta, _, _ = _lm_minimize(pose_residual(s, h0, basis, cam),
                                       np.zeros(8), opts, np.ones(8))
            homs[i] = Homography((h0.ravel() + basis @ delta).reshape(3, 3))
        x0 = [cam.fx, cam.fy, cam.cx, cam.cy, cam.skew]
        scales = [cam.fx, cam.fy, max(abs(cam.cx), 1.0),
                  max(abs(cam.cy), 1.0), max(cam.fx * 1e-3, 1.0)]
        if opts.refine_kappa:
            x0.append(cam.kappa)
            scales.append(1.0)
        x, _, _ = _lm_minimize(camera_residual, np.array(x0), opts,
                               np.array(scales))
        cam = CameraModel(fx=x[0], fy=x[1], cx=x[2], cy=x[3], skew=x[4],
                          kappa=float(x[5]) if opts.refine_kappa else cam.kappa)

    out = RegistrationResult(
        homographies=homs,
        camera=cam,
        residuals=initial.residuals.copy(),
        reprojection_rms=np.full(len(homs), np.nan),
        lr_shape=initial.lr_shape,
    )
    out.reprojection_rms = reprojection_rms(out, sets)
    return out


def refine_photometric(frames: list[ImageGrid], initial: RegistrationResult,
                       template: ImageGrid,
                       opts: RefineOptions | None = None) -> RegistrationResult:
    """Polish each frame's homography (and optionally the shared distortion)
    against the template.

    Per frame, Levenberg-Marquardt runs over the 8 free parameters of the
    canonical homography; afterwards a single joint pass refines kappa over
    all frames.  The accepted cost sequence is non-increasing per frame and
    the result is never worse than the input under the frozen validity
    masks.  Frames that cannot be improved (e.g. pure noise) are returned
    unchanged rather than raising.
    """
    opts = opts or RefineOptions()
    frames = _as_grids(frames)
    spec = _grid_spec_of(template)
    tmpl_nan = np.ascontiguousarray(template.data_with_nan())
    cam = initial.camera
    n = initial.n_frames
    if len(frames) != n:
        raise ValueError(f"{len(frames)} frames vs {n} registered poses")

    lr_shape = frames[0].shape
    stride = 1
    if opts.max_lm_pixels is not None:
        n_px = lr_shape[0] * lr_shape[1]
        while n_px // (stride * stride) > opts.max_lm_pixels:
            stride += 1
    samplers = [_FrameSampler(f.shape, cam, stride) for f in frames]
    frame_flats = [samplers[i].subsample(f.data) for i, f in enumerate(frames)]
    homs: list[Homography] = []

    def frame_residual_fn(idx: int, kappa: float, h0: np.ndarray,
                          basis: np.ndarray, mask0: np.ndarray):
        def fn(delta: np.ndarray):
            try:
                hom = Homography((h0.ravel() + basis @ delta).reshape(3, 3))
            except SingularProjectionError:
                return None
            vals, ok = samplers[idx].warp_template(tmpl_nan, spec, hom, kappa)
            keep = mask0 & ok
            if opts.huber_delta is not None:
                r = np.where(keep, vals - frame_flats[idx], 0.0)
                w = np.minimum(1.0, opts.huber_delta / np.maximum(np.abs(r), 1e-12))
                return np.sqrt(w) * r
            return np.where(keep, vals - frame_flats[idx], 0.0)
        return fn

    for i in range(n):
        h0 = initial.homographies[i].matrix
        _, ok0 = samplers[i].warp_template(tmpl_nan, spec, initial.homographies[i],
                                           cam.kappa)
        if not np.any(ok0):
            homs.append(initial.homographies[i])
            continue
        basis = _tangent_basis(h0)
        fn = frame_residual_fn(i, cam.kappa, h0, basis, ok0)
        delta, _, _ = _lm_minimize(fn, np.zeros(8), opts, np.ones(8))
        homs.append(Homography((h0.ravel() + basis @ delta).reshape(3, 3)))

    kappa = cam.kappa
    if opts.refine_kappa:
        masks = []
        for i in range(n):
            _, ok0 = samplers[i].warp_template(tmpl_nan, spec, homs[i], kappa)
            masks.append(ok0)

        def kappa_residual(x: np.ndarray):
            k = float(x[0])
            if abs(k) > _KAPPA_BOUND:
                return None
            parts = []
            for i in range(n):
                vals, ok = samplers[i].warp_template(tmpl_nan, spec, homs[i], k)
                parts.append(np.where(masks[i] & ok, vals - frame_flats[i], 0.0))
            return np.concatenate(parts)

        x, _, _ = _lm_minimize(kappa_residual, np.array([kappa]), opts,
                               np.array([max(1.0, abs(kappa))]))
        kappa = float(x[0])

    cam_out = cam.with_kappa(kappa)
    residuals = np.empty(n)
    for i in range(n):
        vals, ok = samplers[i].warp_template(tmpl_nan, spec, homs[i], kappa)
        if np.any(ok):
            r = vals[ok] - frame_flats[i][ok]
            residuals[i] = math.sqrt(float((r @ r) / len(r)))
        else:
            residuals[i] = np.nan
    return RegistrationResult(
        homographies=homs,
        camera=cam_out,
        residuals=residuals,
        reprojection_rms=np.full(n, np.nan),
        lr_shape=lr_shape,
    )


def _pin_gauge(reg: RegistrationResult, sets: list[CorrespondenceSet],
               opts: RefineOptions) -> RegistrationResult:
    """Re-anchor the shared gauge of a registration to the point matches.

    Template-based photometric alternation leaves a common module-plane
    warp (and the paired distortion shift) unobservable: applying one
    homography G to every pose while the template moves by G^-1 does not
    change any photometric residual.  This fits exactly those global
    degrees of freedom, (G, delta kappa), to the correspondences, leaving
    the photometrically-determined per-frame alignment untouched.  With
    ``opts.refine_kappa`` false only G is fitted.
    """
    basis = _tangent_basis(np.eye(3))
    kappa0 = reg.camera.kappa

    def fn(x: np.ndarray):
        kappa = kappa0 + (float(x[8]) if len(x) == 9 else 0.0)
        if abs(kappa) > _KAPPA_BOUND:
            return None
        try:
            g = Homography((np.eye(3).ravel() + basis @ x[:8]).reshape(3, 3))
        except SingularProjectionError:
            return None
        cam = reg.camera.with_kappa(kappa)
        parts = []
        for s in sets:
            hom = reg.homographies[s.frame_index].compose(g)
            uv, ok = forward_map_points(s.module_points, hom, cam)
            if not np.all(ok):
                return None
            parts.append((uv - s.pixel_points).ravel())
        return np.concatenate(parts)

    n_par = 9 if opts.refine_kappa else 8
    x, _, _ = _lm_minimize(fn, np.zeros(n_par), opts, np.ones(n_par))
    g = Homography((np.eye(3).ravel() + basis @ x[:8]).reshape(3, 3))
    out = RegistrationResult(
        homographies=[h.compose(g) for h in reg.homographies],
        camera=reg.camera.with_kappa(
            kappa0 + (float(x[8]) if opts.refine_kappa else 0.0)),
        residuals=reg.residuals.copy(),
        reprojection_rms=reg.reprojection_rms.copy(),
        lr_shape=reg.lr_shape,
    )
    return out


def _pyramid_level(frames: list[ImageGrid]) -> list[ImageGrid]:
    """One octave down: Gaussian blur (sigma 1) then factor-2 decimation."""
    out = []
    for f in frames:
        blurred = ndi.gaussian_filter(f.data, 1.0, mode="nearest")
        out.append(ImageGrid(np.ascontiguousarray(blurred[::2, ::2])))
    return out


def multiscale_register(frames: list[ImageGrid], sets: list[CorrespondenceSet],
                        hr: HrGridSpec,
                        opts: MultiscaleOptions | None = None) -> RegistrationResult:
    """Full registration: point-based initialization plus coarse-to-fine
    photometric alternation.

    Zhang initialization and point-based joint refinement run on the
    full-resolution correspondences; the result, scaled down, seeds the
    pyramid.  Each level then alternates template building and photometric
    refinement ``passes_per_level`` times, and the intrinsics are rescaled
    when moving up a level.  With ``levels=1`` this reduces to the point
    stage plus template/refine alternation at full resolution.
    """
    opts = opts or MultiscaleOptions()
    if opts.levels < 1:
        raise ValueError(f"levels must be >= 1, got {opts.levels}")
    if opts.passes_per_level < 1:
        raise ValueError(f"passes_per_level must be >= 1, got {opts.passes_per_level}")
    frames = _as_grids(frames)
    if len(frames) == 0:
        raise InsufficientViewsError("no frames to register")

    pyramid = [list(frames)]
    for _ in range(opts.levels - 1):
        pyramid.append(_pyramid_level(pyramid[-1]))

    coarsest = opts.levels - 1
    reg = zhang_initialize(sets, frames[0].shape)
    reg = refine_points(sets, reg, opts.refine, opts.point_alternations)
    if coarsest > 0:
        reg = RegistrationResult(
            homographies=list(reg.homographies),
            camera=reg.camera.scaled(1.0 / (1 << coarsest)),
            residuals=reg.residuals.copy(),
            reprojection_rms=reg.reprojection_rms.copy(),
            lr_shape=pyramid[coarsest][0].shape,
        )

    for level in range(coarsest, -1, -1):
        hr_level = hr.coarser(level)
        level_frames = pyramid[level]
        passes = opts.full_res_passes if level == 0 else opts.passes_per_level
        for _ in range(max(1, passes)):
            template = build_template(level_frames, reg, hr_level)
            reg = refine_photometric(level_frames, reg, template, opts.refine)
        if level > 0:
            reg = RegistrationResult(
                homographies=list(reg.homographies),
                camera=reg.camera.scaled(2.0),
                residuals=reg.residuals.copy(),
                reprojection_rms=reg.reprojection_rms.copy(),
                lr_shape=pyramid[level - 1][0].shape,
            )

    reg = _pin_gauge(reg, sets, opts.refine)
    reg.reprojection_rms = reprojection_rms(reg, sets)
    return reg
