"""Synthetic scene and acquisition harness tests.

The forward model is the oracle for the rest of the suite, so these tests
pin its determinism, its noise statistics, and the structural guarantees
(two-level plain scenes, disjoint crack components, visibility policy).
"""

from __future__ import annotations

import numpy as np
import pytest
from scipy import ndimage

from planarsr import (
    AcquisitionSpec,
    ConfigError,
    NoiseParams,
    PoseJitter,
    SceneSpec,
    generate_scene,
    generate_sequence,
    perturb_correspondences,
    reprojection_rms,
)

from conftest import SMALL_LR_SHAPE, small_camera, small_hr, small_sequence

# ---------------------------------------------------------------------------
# Scene generation
# ---------------------------------------------------------------------------


class TestGenerateScene:
    def test_plain_scene_has_exactly_two_levels(self):
        spec = SceneSpec(hr=small_hr(2), texture_amplitude=0.0, crack_count=0,
                         busbar_count=0)
        scene = generate_scene(spec)
        levels = np.unique(scene.image.data)
        np.testing.assert_array_equal(levels, [spec.gap_level, spec.cell_level])
        assert not scene.crack_mask.any()

    def test_three_cracks_are_disjoint_components(self):
        spec = SceneSpec(hr=small_hr(2), texture_amplitude=0.0, crack_count=3,
                         seed=1)
        scene = generate_scene(spec)
        _, n = ndimage.label(scene.crack_mask, structure=np.ones((3, 3)))
        assert n == 3
        assert np.all(scene.image.data[scene.crack_mask] == spec.crack_level)
        assert spec.crack_level < spec.cell_level

    def test_same_seed_is_bitwise_deterministic(self):
        spec = SceneSpec(hr=small_hr(2), seed=3)
        a = generate_scene(spec)
        b = generate_scene(spec)
        np.testing.assert_array_equal(a.image.data, b.image.data)
        np.testing.assert_array_equal(a.crack_mask, b.crack_mask)

    def test_intensities_stay_in_unit_range(self):
        scene = generate_scene(SceneSpec(hr=small_hr(2), texture_amplitude=0.3))
        assert scene.image.data.min() >= 0.0
        assert scene.image.data.max() <= 1.0

    def test_crack_threshold_is_midpoint(self):
        spec = SceneSpec(hr=small_hr(2))
        assert spec.crack_threshold == pytest.approx(
            0.5 * (spec.cell_level + spec.crack_level))

    def test_rejects_invalid_spec(self):
        hr = small_hr(2)
        with pytest.raises(ValueError):
            SceneSpec(hr=hr, cells=(0, 5))
        with pytest.raises(ValueError):
            SceneSpec(hr=hr, crack_count=-1)
        with pytest.raises(ValueError):
            SceneSpec(hr=hr, texture_amplitude=-0.1)


# ---------------------------------------------------------------------------
# Sequence generation
# ---------------------------------------------------------------------------


class TestGenerateSequence:
    def test_zero_jitter_zero_noise_repeats_one_view(self):
        hr = small_hr(1)
        scene = generate_scene(SceneSpec(hr=hr, crack_count=0))
        acq = AcquisitionSpec(
            n_frames=4, lr_shape=SMALL_LR_SHAPE, camera=small_camera(0.0),
            jitter=PoseJitter(translation=0.0, rotation_deg=0.0, tilt=0.0),
            psf_sigma=1e-3, noise=NoiseParams(gaussian_sigma=0.0), seed=0,
        )
        seq = generate_sequence(scene, hr, acq)
        for frame in seq.frames[1:]:
            np.testing.assert_array_equal(frame.data, seq.frames[0].data)
        np.testing.assert_array_equal(
            reprojection_rms(seq.truth, seq.correspondences), 0.0)

    def test_default_jitter_makes_frames_differ_pairwise(self):
        _, seq = small_sequence(n_frames=5)
        for i in range(len(seq.frames)):
            for j in range(i + 1, len(seq.frames)):
                diff = np.abs(seq.frames[i].data - seq.frames[j].data).mean()
                assert diff > 0.0

    def test_same_seed_is_bitwise_deterministic(self):
        _, a = small_sequence(n_frames=3, gaussian_sigma=0.01)
        _, b = small_sequence(n_frames=3, gaussian_sigma=0.01)
        for fa, fb in zip(a.frames, b.frames):
            np.testing.assert_array_equal(fa.data, fb.data)
        for ha, hb in zip(a.truth.homographies, b.truth.homographies):
            np.testing.assert_array_equal(ha.matrix, hb.matrix)

    def test_gaussian_noise_statistics(self):
        # >= 1e5 aggregate pixels across frames; poses are identical with
        # and without noise, so the difference isolates the noise field.
        sigma = 0.01
        _, clean = small_sequence(n_frames=20, gaussian_sigma=0.0)
        _, noisy = small_sequence(n_frames=20, gaussian_sigma=sigma)
        diffs = np.concatenate([
            (n.data - c.data).ravel()
            for n, c in zip(noisy.frames, clean.frames)
        ])
        assert diffs.size >= 1e5
        assert abs(diffs.std() - sigma) < 0.1 * sigma

    def test_impulse_noise_replaces_expected_fraction(self):
        frac = 0.05
        hr = small_hr(2)
        scene = generate_scene(SceneSpec(hr=hr))
        base = AcquisitionSpec(
            n_frames=1, lr_shape=SMALL_LR_SHAPE, camera=small_camera(0.05),
            psf_sigma=1.0, noise=NoiseParams(gaussian_sigma=0.0), seed=0)
        imp = AcquisitionSpec(
            n_frames=1, lr_shape=SMALL_LR_SHAPE, camera=small_camera(0.05),
            psf_sigma=1.0,
            noise=NoiseParams(gaussian_sigma=0.0, impulse_fraction=frac), seed=0)
        clean = generate_sequence(scene, hr, base).frames[0].data
        noisy = generate_sequence(scene, hr, imp).frames[0].data
        changed = np.count_nonzero(clean != noisy)
        n_px = clean.size
        # Impulses drawing the value already present leave no trace.
        assert changed <= frac * n_px
        assert changed > 0.5 * frac * n_px

    def test_unreachable_visibility_raises(self):
        hr = small_hr(2)
        scene = generate_scene(SceneSpec(hr=hr))
        acq = AcquisitionSpec(
            n_frames=3, lr_shape=SMALL_LR_SHAPE, camera=small_camera(0.05),
            jitter=PoseJitter(translation=0.8, rotation_deg=40.0, tilt=0.5),
            psf_sigma=1.0, margin=0.02, seed=0)
        with pytest.raises(ConfigError):
            generate_sequence(scene, hr, acq)

    def test_rejects_invalid_specs(self):
        cam = small_camera(0.0)
        with pytest.raises(ValueError):
            AcquisitionSpec(n_frames=0, lr_shape=SMALL_LR_SHAPE, camera=cam)
        with pytest.raises(ValueError):
            AcquisitionSpec(n_frames=1, lr_shape=SMALL_LR_SHAPE, camera=cam,
                            psf_sigma=0.0)
        with pytest.raises(ValueError):
            AcquisitionSpec(n_frames=1, lr_shape=SMALL_LR_SHAPE, camera=cam,
                            margin=0.6)
        with pytest.raises(ValueError):
            NoiseParams(gaussian_sigma=-0.01)
        with pytest.raises(ValueError):
            NoiseParams(impulse_fraction=1.5)
        with pytest.raises(ValueError):
            PoseJitter(translation=-0.1)


# ---------------------------------------------------------------------------
# Correspondence perturbation
# ---------------------------------------------------------------------------


class TestPerturbCorrespondences:
    def test_zero_sigma_copies_exactly(self):
        _, seq = small_sequence(n_frames=3)
        out = perturb_correspondences(seq.correspondences, 0.0)
        for orig, copy in zip(seq.correspondences, out):
            assert copy is not orig
            np.testing.assert_array_equal(copy.pixel_points, orig.pixel_points)
            np.testing.assert_array_equal(copy.module_points, orig.module_points)

    def test_noise_statistics(self):
        _, seq = small_sequence(n_frames=14)
        sigma = 0.5
        out = perturb_correspondences(seq.correspondences, sigma, rng=11)
        deltas = np.concatenate([
            (o.pixel_points - s.pixel_points).ravel()
            for o, s in zip(out, seq.correspondences)
        ])
        assert deltas.size >= 400
        assert abs(deltas.std() - sigma) < 0.2 * sigma

    def test_negative_sigma_raises(self):
        _, seq = small_sequence(n_frames=3)
        with pytest.raises(ValueError):
            perturb_correspondences(seq.correspondences, -0.1)
