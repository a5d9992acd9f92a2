"""Motion-field and sparse sampling-operator tests.

Small instances are cross-checked against the explicit dense matrix the
operator exports, which serves as the oracle for forward and adjoint
application.
"""

from __future__ import annotations

import numpy as np
import pytest

from planarsr import (
    CameraModel,
    HrGridSpec,
    Homography,
    ImageGrid,
    MotionField,
    RegistrationResult,
    apply_adjoint,
    apply_forward,
    build_motion_field,
    build_system_matrix,
)

IDENTITY_CAM = CameraModel(fx=1.0, fy=1.0, cx=0.0, cy=0.0)


def reg_of(homs, cam, lr_shape) -> RegistrationResult:
    nan = np.full(len(homs), np.nan)
    return RegistrationResult(list(homs), cam, nan.copy(), nan.copy(), tuple(lr_shape))


def identity_setup(n: int = 8):
    """LR raster whose pixel centers coincide with module coordinates."""
    rect = (-0.5, -0.5, n - 0.5, n - 0.5)
    hr = HrGridSpec(width=n, height=n, module_rect=rect, magnification=1)
    reg = reg_of([Homography.identity()], IDENTITY_CAM, (n, n))
    return hr, reg


def jittered_setup(lr: int = 4, magnification: int = 2, kappa: float = 0.05):
    """Small oblique view for dense-oracle and adjoint checks."""
    n = lr * magnification
    rect = (0.0, 0.0, 1.0, 1.0)
    hr = HrGridSpec(width=n, height=n, module_rect=rect, magnification=magnification)
    cam = CameraModel(fx=float(lr), fy=float(lr), cx=lr / 2 - 0.5, cy=lr / 2 - 0.5,
                      kappa=kappa)
    hom = Homography(np.array([
        [1.05, 0.04, -0.52],
        [-0.03, 0.98, -0.49],
        [0.02, -0.01, 1.0],
    ]))
    reg = reg_of([hom], cam, (lr, lr))
    return hr, reg


# ---------------------------------------------------------------------------
# Motion fields
# ---------------------------------------------------------------------------


class TestBuildMotionField:
    def test_identity_chain_gives_zero_field(self):
        hr, reg = identity_setup()
        field = build_motion_field(0, reg, hr)
        assert field.valid.all()
        np.testing.assert_allclose(field.vectors, 0.0, atol=1e-12)

    def test_identity_chain_magnification_two(self):
        # Module rectangle chosen so LR centers align with HR centers at s=2.
        hr = HrGridSpec(width=8, height=8, module_rect=(-0.5, -0.5, 3.5, 3.5),
                        magnification=2)
        reg = reg_of([Homography.identity()], IDENTITY_CAM, (4, 4))
        field = build_motion_field(0, reg, hr)
        assert field.valid.all()
        np.testing.assert_allclose(field.vectors, 0.0, atol=1e-12)

    def test_pure_translation_gives_constant_field(self):
        hr, _ = identity_setup()
        hom = Homography(np.array([
            [1.0, 0.0, 0.5], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0],
        ]))
        reg = reg_of([hom], IDENTITY_CAM, (8, 8))
        field = build_motion_field(0, reg, hr)
        assert field.valid.all()
        # Forward map shifts by +0.5 module units, so pixels observe -0.5.
        np.testing.assert_allclose(field.vectors[..., 0], -0.5, atol=1e-12)
        np.testing.assert_allclose(field.vectors[..., 1], 0.0, atol=1e-12)

    def test_barrel_distortion_masks_far_corners(self):
        # fx=2 puts frame corners far outside the invertible window of
        # kappa=-0.2 (max distorted radius ~0.861) while the center stays in.
        hr = HrGridSpec(width=8, height=8, module_rect=(-100.0, -100.0, 100.0, 100.0),
                        magnification=1)
        cam = CameraModel(fx=2.0, fy=2.0, cx=3.5, cy=3.5, kappa=-0.2)
        reg = reg_of([Homography.identity()], cam, (8, 8))
        field = build_motion_field(0, reg, hr)
        assert not field.valid[0, 0]
        assert not field.valid[7, 7]
        assert field.valid[3, 3]
        np.testing.assert_array_equal(field.vectors[~field.valid], 0.0)

    def test_requires_frame_size(self):
        hr, reg = identity_setup()
        bare = RegistrationResult(reg.homographies, reg.camera, reg.residuals,
                                  reg.reprojection_rms, None)
        with pytest.raises(ValueError):
            build_motion_field(0, bare, hr)

    def test_mapped_positions_are_base_plus_vectors(self):
        hr, reg = identity_setup()
        hom = Homography(np.array([
            [1.0, 0.0, 0.25], [0.0, 1.0, -0.25], [0.0, 0.0, 1.0],
        ]))
        field = build_motion_field(0, reg_of([hom], IDENTITY_CAM, (8, 8)), hr)
        xs, ys = field.mapped_positions(1)
        uu, vv = np.meshgrid(np.arange(8.0), np.arange(8.0))
        np.testing.assert_allclose(xs, (uu.ravel() - 0.25), atol=1e-12)
        np.testing.assert_allclose(ys, (vv.ravel() + 0.25), atol=1e-12)


class TestMotionFieldValidation:
    def test_rejects_bad_vector_shape(self):
        with pytest.raises(ValueError):
            MotionField(0, np.zeros((4, 4)), np.ones((4, 4), bool))

    def test_rejects_mismatched_mask(self):
        with pytest.raises(ValueError):
            MotionField(0, np.zeros((4, 4, 2)), np.ones((3, 4), bool))


# ---------------------------------------------------------------------------
# System matrices
# ---------------------------------------------------------------------------


class TestBuildSystemMatrix:
    def test_rejects_nonpositive_sigma(self):
        hr, reg = identity_setup()
        field = build_motion_field(0, reg, hr)
        for sigma in (0.0, -1.0, np.nan, np.inf):
            with pytest.raises(ValueError):
                build_system_matrix(field, sigma, hr)

    def test_narrow_psf_approaches_identity(self):
        hr, reg = identity_setup()
        field = build_motion_field(0, reg, hr)
        mat = build_system_matrix(field, 1e-3, hr)
        assert mat.row_valid.all()
        for row in range(mat.rows):
            _, w = mat.row_entries(row)
            assert w.max() > 0.999
        f = ImageGrid(np.random.default_rng(0).random((8, 8)))
        out = apply_forward(mat, f)
        np.testing.assert_allclose(out.data, f.data, atol=1e-6)

    def test_constant_image_maps_to_constant(self):
        hr, reg = jittered_setup()
        field = build_motion_field(0, reg, hr)
        mat = build_system_matrix(field, 1.2, hr)
        out = apply_forward(mat, ImageGrid(np.full((8, 8), 0.37)))
        assert out.mask is not None and out.mask.any()
        np.testing.assert_allclose(out.data[out.mask], 0.37, atol=1e-9)

    def test_rows_form_partition_of_unity(self):
        hr, reg = jittered_setup(kappa=0.05)
        field = build_motion_field(0, reg, hr)
        mat = build_system_matrix(field, 1.2, hr)
        n_valid = 0
        for row in range(mat.rows):
            cols, w = mat.row_entries(row)
            if mat.row_valid[row]:
                assert w.min() >= 0.0
                assert abs(w.sum() - 1.0) < 1e-9
                n_valid += 1
            else:
                assert len(cols) == 0
        assert n_valid > 0

    def test_row_entry_count_bound(self):
        hr, reg = jittered_setup()
        sigma = 1.2
        mat = build_system_matrix(build_motion_field(0, reg, hr), sigma, hr)
        bound = (2 * int(np.ceil(3 * sigma)) + 1) ** 2
        for row in range(mat.rows):
            cols, _ = mat.row_entries(row)
            assert len(cols) <= bound

    def test_weight_centroid_matches_mapped_position(self):
        hr, reg = jittered_setup(lr=6, magnification=2)
        field = build_motion_field(0, reg, hr)
        sigma = 1.0
        mat = build_system_matrix(field, sigma, hr)
        xs, ys = field.mapped_positions(hr.magnification)
        r = mat.radius
        checked = 0
        for row in range(mat.rows):
            if not mat.row_valid[row]:
                continue
            # Border truncation shifts the centroid; check interior rows.
            if not (r <= xs[row] <= hr.width - 1 - r
                    and r <= ys[row] <= hr.height - 1 - r):
                continue
            cols, w = mat.row_entries(row)
            cx = float(np.sum(w * (cols % hr.width)))
            cy = float(np.sum(w * (cols // hr.width)))
            assert abs(cx - xs[row]) < 0.05
            assert abs(cy - ys[row]) < 0.05
            checked += 1
        assert checked > 0


class TestApplyForwardAdjoint:
    def test_matches_dense_oracle(self, rng):
        hr, reg = jittered_setup()
        field = build_motion_field(0, reg, hr)
        mat = build_system_matrix(field, 1.2, hr)
        dense = mat.to_dense()
        assert dense.shape == (16, 64)

        f = rng.random((8, 8))
        fwd = apply_forward(mat, ImageGrid(f))
        np.testing.assert_allclose(fwd.data.ravel()[mat.row_valid],
                                   (dense @ f.ravel())[mat.row_valid], atol=1e-12)

        g = rng.random((4, 4))
        adj = apply_adjoint(mat, ImageGrid(g))
        np.testing.assert_allclose(adj.data.ravel(), dense.T @ g.ravel(), atol=1e-12)

    def test_adjoint_identity(self, rng):
        hr, reg = jittered_setup(lr=6, magnification=2, kappa=0.05)
        field = build_motion_field(0, reg, hr)
        mat = build_system_matrix(field, 1.2, hr)
        for _ in range(20):
            f = rng.standard_normal((12, 12))
            g = rng.standard_normal((6, 6))
            lhs = float(apply_forward(mat, ImageGrid(f)).data.ravel()
                        [mat.row_valid] @ g.ravel()[mat.row_valid])
            rhs = float(f.ravel() @ apply_adjoint(mat, ImageGrid(g)).data.ravel())
            # Invalid rows carry zero weights, so both sides skip them.
            assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), abs(rhs), 1e-30)

    def test_adjoint_ignores_masked_pixels(self, rng):
        hr, reg = jittered_setup()
        mat = build_system_matrix(build_motion_field(0, reg, hr), 1.2, hr)
        g = rng.random((4, 4))
        mask = np.ones((4, 4), bool)
        mask[0, :] = False
        ref = g.copy()
        ref[0, :] = 0.0
        with_mask = apply_adjoint(mat, ImageGrid(g.copy(), mask=mask))
        zeroed = apply_adjoint(mat, ImageGrid(ref))
        np.testing.assert_array_equal(with_mask.data, zeroed.data)

    def test_forward_masks_invalid_rows(self):
        hr = HrGridSpec(width=8, height=8, module_rect=(-100.0, -100.0, 100.0, 100.0),
                        magnification=1)
        cam = CameraModel(fx=2.0, fy=2.0, cx=3.5, cy=3.5, kappa=-0.2)
        reg = reg_of([Homography.identity()], cam, (8, 8))
        mat = build_system_matrix(build_motion_field(0, reg, hr), 1.0, hr)
        out = apply_forward(mat, ImageGrid(np.ones((8, 8))))
        assert out.mask is not None
        assert not out.mask[0, 0]

    def test_dimension_mismatch_raises(self):
        hr, reg = jittered_setup()
        mat = build_system_matrix(build_motion_field(0, reg, hr), 1.2, hr)
        with pytest.raises(ValueError):
            apply_forward(mat, ImageGrid(np.zeros((5, 5))))
        with pytest.raises(ValueError):
            apply_adjoint(mat, ImageGrid(np.zeros((5, 5))))
