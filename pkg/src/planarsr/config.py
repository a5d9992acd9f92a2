"""Pipeline configuration: dotted keys, defaults, and typed accessors.

A configuration is a flat ``key = value`` mapping.  Unknown keys are
rejected (they are almost always typos); ``auto`` means "derive from the
other settings".  The effective configuration is echoed next to the
outputs so any run can be reproduced from its artifacts.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError
from .geometry import CameraModel
from .grids import HrGridSpec
from .reconstruction import BtvParams, SolverOptions
from .registration import MultiscaleOptions, RefineOptions
from .synth import AcquisitionSpec, NoiseParams, PoseJitter, SceneSpec

AUTO = "auto"

DEFAULTS: dict[str, str] = {
    "out": "out",
    "seed": "0",
    "magnification": "3",
    "psf_sigma": AUTO,  # 0.4 * magnification
    "border_crop": AUTO,  # 4 * magnification
    "paths.frames": AUTO,  # {out}/frame_*.pgm
    "paths.correspondences": AUTO,
    "paths.registration": AUTO,
    "paths.reconstruction": AUTO,
    "paths.baseline": AUTO,
    "paths.ground_truth": AUTO,
    "paths.crack_mask": AUTO,
    "hr.width": AUTO,
    "hr.height": AUTO,
    "hr.rect": AUTO,  # "y1_min y2_min y1_max y2_max"
    "scene.cells_rows": "4",
    "scene.cells_cols": "5",
    "scene.busbars": "3",
    "scene.cracks": "6",
    "scene.texture": "0.05",
    "scene.cell_level": "0.85",
    "scene.gap_level": "0.05",
    "scene.busbar_level": "0.3",
    "scene.crack_level": "0.15",
    "acq.frames": "20",
    "acq.width": "640",
    "acq.height": "512",
    "acq.fx": "640",
    "acq.fy": "640",
    "acq.cx": AUTO,  # (width - 1) / 2
    "acq.cy": AUTO,
    "acq.skew": "0",
    "acq.kappa": "0.05",
    "acq.margin": "0.08",
    "acq.translation": "0.02",
    "acq.rotation_deg": "2.0",
    "acq.tilt": "0.05",
    "acq.noise_sigma": "0.005",
    "acq.impulse": "0.0",
    "acq.corr_sigma": "0.2",
    "reg.levels": "3",
    "reg.passes": "2",
    "reg.refine_kappa": "true",
    "reg.max_iterations": "50",
    "reg.cost_tol": "1e-8",
    "btv.window": "2",
    "btv.alpha": "0.7",
    "btv.eps": "1e-3",
    "btv.strength": AUTO,  # suite-calibrated single default, see btv_params()
    "solver.max_iterations": "15",
    "solver.gradient_tol": "1e-3",
    "solver.robust": "false",
    "solver.max_outer": "3",
}

_VALID_MAGNIFICATIONS = (1, 2, 3, 4)


@dataclass
class PipelineConfig:
    """Validated flat configuration with typed accessors."""

    values: dict[str, str]

    def __post_init__(self):
        unknown = sorted(set(self.values) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        merged = dict(DEFAULTS)
        merged.update(self.values)
        self.values = merged
        if self.magnification not in _VALID_MAGNIFICATIONS:
            raise ConfigError(
                f"magnification must be one of {_VALID_MAGNIFICATIONS}, got "
                f"{self.values['magnification']!r} (1 is a degenerate debug setting)"
            )

    # typed accessors -----------------------------------------------------
    def get_str(self, key: str) -> str:
        return self.values[key]

    def get_int(self, key: str) -> int:
        try:
            return int(self.values[key])
        except ValueError as exc:
            raise ConfigError(f"{key}: expected integer, got {self.values[key]!r}") from exc

    def get_float(self, key: str) -> float:
        try:
            return float(self.values[key])
        except ValueError as exc:
            raise ConfigError(f"{key}: expected number, got {self.values[key]!r}") from exc

    def get_bool(self, key: str) -> bool:
        v = self.values[key].strip().lower()
        if v in ("true", "1", "yes", "on"):
            return True
        if v in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected boolean, got {self.values[key]!r}")

    def is_auto(self, key: str) -> bool:
        return self.values[key].strip().lower() == AUTO

    # derived settings ----------------------------------------------------
    @property
    def magnification(self) -> int:
        return self.get_int("magnification")

    @property
    def out_dir(self) -> str:
        return self.values["out"]

    @property
    def seed(self) -> int:
        return self.get_int("seed")

    @property
    def psf_sigma(self) -> float:
        if self.is_auto("psf_sigma"):
            return 0.4 * self.magnification
        v = self.get_float("psf_sigma")
        if v <= 0:
            raise ConfigError(f"psf_sigma must be > 0, got {v}")
        return v

    @property
    def border_crop(self) -> int:
        if self.is_auto("border_crop"):
            return 4 * self.magnification
        return self.get_int("border_crop")

    def path(self, key: str) -> str:
        if not self.is_auto(key):
            return self.values[key]
        name = {
            "paths.frames": "frame_*.pgm",
            "paths.correspondences": "correspondences.txt",
            "paths.registration": "registration.txt",
            "paths.reconstruction": "reconstruction.pgm",
            "paths.baseline": "baseline.pgm",
            "paths.ground_truth": "scene_hr.pgm",
            "paths.crack_mask": "crack_mask.pgm",
        }[key]
        return f"{self.out_dir}/{name}"

    def module_rect(self) -> tuple[float, float, float, float]:
        if self.is_auto("hr.rect"):
            return (0.0, 0.0, float(self.get_int("scene.cells_cols")),
                    float(self.get_int("scene.cells_rows")))
        parts = self.values["hr.rect"].split()
        if len(parts) != 4:
            raise ConfigError("hr.rect: expected 'y1_min y2_min y1_max y2_max'")
        try:
            return tuple(float(p) for p in parts)  # type: ignore[return-value]
        except ValueError as exc:
            raise ConfigError(f"hr.rect: {exc}") from exc

    def hr_spec(self, lr_shape: tuple[int, int] | None = None) -> HrGridSpec:
        s = self.magnification
        if lr_shape is None:
            lr_shape = (self.get_int("acq.height"), self.get_int("acq.width"))
        width = lr_shape[1] * s if self.is_auto("hr.width") else self.get_int("hr.width")
        height = lr_shape[0] * s if self.is_auto("hr.height") else self.get_int("hr.height")
        try:
            return HrGridSpec(width=width, height=height,
                              module_rect=self.module_rect(), magnification=s)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def scene_spec(self, hr: HrGridSpec) -> SceneSpec:
        try:
            return SceneSpec(
                hr=hr,
                cells=(self.get_int("scene.cells_rows"), self.get_int("scene.cells_cols")),
                busbar_count=self.get_int("scene.busbars"),
                crack_count=self.get_int("scene.cracks"),
                texture_amplitude=self.get_float("scene.texture"),
                cell_level=self.get_float("scene.cell_level"),
                gap_level=self.get_float("scene.gap_level"),
                busbar_level=self.get_float("scene.busbar_level"),
                crack_level=self.get_float("scene.crack_level"),
                seed=self.seed,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def acquisition_spec(self) -> AcquisitionSpec:
        w = self.get_int("acq.width")
        h = self.get_int("acq.height")
        cx = (w - 1) / 2.0 if self.is_auto("acq.cx") else self.get_float("acq.cx")
        cy = (h - 1) / 2.0 if self.is_auto("acq.cy") else self.get_float("acq.cy")
        try:
            camera = CameraModel(
                fx=self.get_float("acq.fx"), fy=self.get_float("acq.fy"),
                cx=cx, cy=cy, skew=self.get_float("acq.skew"),
                kappa=self.get_float("acq.kappa"),
            )
            return AcquisitionSpec(
                n_frames=self.get_int("acq.frames"),
                lr_shape=(h, w),
                camera=camera,
                jitter=PoseJitter(
                    translation=self.get_float("acq.translation"),
                    rotation_deg=self.get_float("acq.rotation_deg"),
                    tilt=self.get_float("acq.tilt"),
                ),
                psf_sigma=self.psf_sigma,
                noise=NoiseParams(
                    gaussian_sigma=self.get_float("acq.noise_sigma"),
                    impulse_fraction=self.get_float("acq.impulse"),
                ),
                margin=self.get_float("acq.margin"),
                seed=self.seed + 1,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def multiscale_options(self) -> MultiscaleOptions:
        try:
            return MultiscaleOptions(
                levels=self.get_int("reg.levels"),
                passes_per_level=self.get_int("reg.passes"),
                refine=RefineOptions(
                    max_iterations=self.get_int("reg.max_iterations"),
                    cost_tol=self.get_float("reg.cost_tol"),
                    refine_kappa=self.get_bool("reg.refine_kappa"),
                ),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def btv_params(self) -> BtvParams:
        if self.is_auto("btv.strength"):
            # Calibrated on the synthetic suite: small enough that thin dark
            # features deconvolve to full depth at the default noise level,
            # large enough to keep noise amplification bounded (PSNR still
            # rises monotonically through 60 NCG iterations at s=3 and s=4).
            strength = 2e-4
        else:
            strength = self.get_float("btv.strength")
        try:
            return BtvParams(
                window=self.get_int("btv.window"),
                alpha=self.get_float("btv.alpha"),
                strength=strength,
                eps=self.get_float("btv.eps"),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def solver_options(self) -> SolverOptions:
        try:
            return SolverOptions(
                max_iterations=self.get_int("solver.max_iterations"),
                gradient_tol=self.get_float("solver.gradient_tol"),
                robust=self.get_bool("solver.robust"),
                max_outer=self.get_int("solver.max_outer"),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def crack_threshold(self) -> float:
        return 0.5 * (self.get_float("scene.cell_level")
                      + self.get_float("scene.crack_level"))


def parse_overrides(pairs: list[str]) -> dict[str, str]:
    """Parse repeated ``--set key=value`` arguments."""
    out: dict[str, str] = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        out[key] = value.strip()
    return out


def load_config(config_path: str | None = None,
                overrides: dict[str, str] | None = None) -> PipelineConfig:
    """Defaults, then the config file, then explicit overrides."""
    values: dict[str, str] = {}
    if config_path is not None:
        from .fileio import read_config_file

        values.update(read_config_file(config_path))
    if overrides:
        values.update(overrides)
    return PipelineConfig(values)
