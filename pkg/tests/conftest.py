"""Shared fixtures: a small synthetic sequence reused across test modules."""

from __future__ import annotations

import numpy as np
import pytest

from planarsr import (
    AcquisitionSpec,
    CameraModel,
    HrGridSpec,
    NoiseParams,
    PoseJitter,
    SceneSpec,
    SequenceData,
    generate_scene,
    generate_sequence,
)

# Small stand-in for the full-size acquisition: same module aspect and
# jitter regime, but at 80x64 LR so registration-level tests stay fast.
SMALL_LR_SHAPE = (64, 80)
SMALL_RECT = (0.0, 0.0, 5.0, 4.0)


def small_camera(kappa: float = 0.05) -> CameraModel:
    return CameraModel(fx=80.0, fy=80.0, cx=39.5, cy=31.5, kappa=kappa)


def small_hr(magnification: int = 2) -> HrGridSpec:
    return HrGridSpec(
        width=80 * magnification,
        height=64 * magnification,
        module_rect=SMALL_RECT,
        magnification=magnification,
    )


def small_sequence(
    n_frames: int = 6,
    magnification: int = 2,
    kappa: float = 0.05,
    gaussian_sigma: float = 0.0,
    seed: int = 0,
):
    """(scene, SequenceData) for a fast small-frame acquisition."""
    hr = small_hr(magnification)
    scene = generate_scene(
        SceneSpec(hr=hr, crack_count=0, texture_amplitude=0.05, seed=seed)
    )
    acq = AcquisitionSpec(
        n_frames=n_frames,
        lr_shape=SMALL_LR_SHAPE,
        camera=small_camera(kappa),
        jitter=PoseJitter(),
        psf_sigma=1.0,
        noise=NoiseParams(gaussian_sigma=gaussian_sigma),
        seed=seed,
    )
    return scene, generate_sequence(scene, hr, acq)


@pytest.fixture(scope="session")
def noiseless_small_sequence():
    """Six noiseless 80x64 frames with exact correspondences, kappa=0.05."""
    return small_sequence()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
