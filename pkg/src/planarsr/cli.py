"""Command-line interface.

Subcommands: ``synth`` renders a synthetic dataset, ``register`` estimates
geometry from frames plus correspondences, ``reconstruct`` solves for the
HR image, ``evaluate`` scores results against ground truth, ``pipeline``
chains all four.  Exit codes: 0 success, 1 configuration/usage error,
2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import glob
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, fileio
from .config import PipelineConfig, load_config, parse_overrides
from .errors import ConfigError, DataError, NumericalError, PlanarSRError
from .grids import ImageGrid
from .metrics import MetricsReport, MetricsRow, crack_recall, psnr, ssim
from .observation import build_motion_field, build_system_matrix
from .reconstruction import rectify_frame_bicubic, solve_map
from .registration import build_template, multiscale_register
from .synth import generate_scene, generate_sequence, perturb_correspondences

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


def _existing_outputs(paths: list[str]) -> list[str]:
    out = []
    for p in paths:
        if any(ch in p for ch in "*?["):
            out.extend(sorted(glob.glob(p)))
        elif Path(p).exists():
            out.append(p)
    return out


def _check_overwrite(cfg: PipelineConfig, paths: list[str], force: bool) -> None:
    existing = _existing_outputs(paths)
    if existing and not force:
        raise ConfigError(
            f"refusing to overwrite {existing[0]} (and possibly more); "
            "pass --force to allow"
        )


def _frame_paths(cfg: PipelineConfig) -> list[str]:
    pattern = cfg.path("paths.frames")
    paths = sorted(glob.glob(pattern))
    if not paths:
        raise DataError(f"no frames match {pattern!r}")
    return paths


def _load_frames(cfg: PipelineConfig) -> list[ImageGrid]:
    return [ImageGrid(fileio.read_pgm(p)) for p in _frame_paths(cfg)]


def cmd_synth(cfg: PipelineConfig, force: bool = False) -> dict:
    """Render scene, frames, correspondences and the true registration."""
    out = Path(cfg.out_dir)
    hr = cfg.hr_spec()
    acq = cfg.acquisition_spec()
    scene_spec = cfg.scene_spec(hr)

    targets = [cfg.path("paths.ground_truth"), cfg.path("paths.crack_mask"),
               cfg.path("paths.frames"), cfg.path("paths.correspondences"),
               str(out / "registration_truth.txt")]
    _check_overwrite(cfg, targets, force)

    scene = generate_scene(scene_spec)
    seq = generate_sequence(scene, hr, acq)

    out.mkdir(parents=True, exist_ok=True)
    fileio.write_pgm(cfg.path("paths.ground_truth"), scene.image)
    fileio.write_mask_pgm(cfg.path("paths.crack_mask"), scene.crack_mask)
    frame_paths = []
    for i, frame in enumerate(seq.frames):
        p = str(out / f"frame_{i:03d}.pgm")
        fileio.write_pgm(p, frame)
        frame_paths.append(p)

    corr_sigma = cfg.get_float("acq.corr_sigma")
    observed = perturb_correspondences(seq.correspondences, corr_sigma,
                                       rng=np.random.default_rng(cfg.seed + 2))
    fileio.write_correspondences(cfg.path("paths.correspondences"), observed)
    fileio.write_correspondences(str(out / "correspondences_exact.txt"),
                                 seq.correspondences)
    fileio.write_registration(str(out / "registration_truth.txt"), seq.truth)
    fileio.write_config_file(str(out / "config.txt"), cfg.values)

    print(f"synth: {len(seq.frames)} frames {acq.lr_shape[1]}x{acq.lr_shape[0]} "
          f"-> {out} (HR {hr.width}x{hr.height}, kappa={acq.camera.kappa})")
    return {"frames": frame_paths, "out": str(out)}


def cmd_register(cfg: PipelineConfig, force: bool = False) -> dict:
    """Estimate geometry from frames and a correspondence file."""
    reg_path = cfg.path("paths.registration")
    _check_overwrite(cfg, [reg_path], force)
    frames = _load_frames(cfg)
    sets = fileio.read_correspondences(cfg.path("paths.correspondences"))
    if len(sets) != len(frames):
        raise DataError(
            f"{len(frames)} frames but correspondences for {len(sets)} frames"
        )
    hr = cfg.hr_spec(frames[0].shape)
    t0 = time.perf_counter()
    reg = multiscale_register(frames, sets, hr, cfg.multiscale_options())
    elapsed = time.perf_counter() - t0
    fileio.write_registration(reg_path, reg)
    print(f"register: kappa={reg.camera.kappa:.5f} fx={reg.camera.fx:.2f} "
          f"fy={reg.camera.fy:.2f} ({elapsed:.1f}s)")
    for i, (rms, res) in enumerate(zip(reg.reprojection_rms, reg.residuals)):
        print(f"  frame {i:3d}: reprojection {rms:.3f} px, residual {res:.4f}")
    return {"registration": reg_path}


def cmd_reconstruct(cfg: PipelineConfig, force: bool = False) -> dict:
    """Solve for the HR image from frames plus a registration."""
    recon_path = cfg.path("paths.reconstruction")
    _check_overwrite(cfg, [recon_path], force)
    frames = _load_frames(cfg)
    reg = fileio.read_registration(cfg.path("paths.registration"))
    if reg.n_frames != len(frames):
        raise DataError(f"{len(frames)} frames but registration has {reg.n_frames}")
    if reg.lr_shape is None:
        reg.lr_shape = frames[0].shape
    hr = cfg.hr_spec(frames[0].shape)

    t0 = time.perf_counter()
    matrices = []
    for i in range(len(frames)):
        field = build_motion_field(i, reg, hr, frames[i].shape)
        matrices.append(build_system_matrix(field, cfg.psf_sigma, hr))
    template = build_template(frames, reg, hr)
    report = solve_map(frames, matrices, cfg.btv_params(), cfg.solver_options(),
                       template)
    elapsed = time.perf_counter() - t0

    fileio.write_pgm(recon_path, np.clip(report.image.data, 0.0, 1.0))
    report_path = str(Path(cfg.out_dir) / "reconstruction_report.json")
    with open(report_path, "w") as fh:
        json.dump(
            {
                "iterations": report.iterations,
                "converged": report.converged,
                "wall_time_s": report.wall_time_s,
                "objective_trace": report.objective_trace,
                "pass_starts": report.pass_starts,
            },
            fh, indent=2,
        )
    print(f"reconstruct: {hr.width}x{hr.height}, {report.iterations} iterations, "
          f"objective {report.objective_trace[-1]:.4f} ({elapsed:.1f}s)")
    return {"reconstruction": recon_path, "report": report_path}


def _best_baseline(cfg: PipelineConfig, frames, reg, hr, truth=None):
    """Single-frame rectified-bicubic baseline; best frame by PSNR when
    ground truth exists, else by photometric residual."""
    candidates = range(len(frames))
    if truth is None:
        res = reg.residuals
        if np.all(np.isfinite(res)):
            best = int(np.argmin(res))
        else:
            best = 0
        return best, rectify_frame_bicubic(frames[best], reg.homographies[best],
                                           reg.camera, hr)
    best_idx, best_img, best_score = 0, None, -np.inf
    crop = cfg.border_crop
    for i in candidates:
        img = rectify_frame_bicubic(frames[i], reg.homographies[i], reg.camera, hr)
        score = psnr(img.data, truth, crop=crop)
        if score > best_score:
            best_idx, best_img, best_score = i, img, score
    return best_idx, best_img


def cmd_evaluate(cfg: PipelineConfig, force: bool = False) -> dict:
    """Score reconstruction and single-frame baseline against ground truth."""
    baseline_path = cfg.path("paths.baseline")
    _check_overwrite(cfg, [baseline_path], force)
    truth = fileio.read_pgm(cfg.path("paths.ground_truth"))
    recon = fileio.read_pgm(cfg.path("paths.reconstruction"))
    if truth.shape != recon.shape:
        raise DataError(
            f"ground truth {truth.shape} vs reconstruction {recon.shape}"
        )
    frames = _load_frames(cfg)
    reg = fileio.read_registration(cfg.path("paths.registration"))
    hr = cfg.hr_spec(frames[0].shape)
    crop = cfg.border_crop

    best_idx, baseline = _best_baseline(cfg, frames, reg, hr, truth)
    fileio.write_pgm(baseline_path, np.clip(baseline.data, 0.0, 1.0))

    rows = [
        MetricsRow("reconstruction", psnr(recon, truth, crop=crop),
                   ssim(recon, truth, crop=crop)),
        MetricsRow(f"bicubic[{best_idx}]", psnr(baseline.data, truth, crop=crop),
                   ssim(baseline.data, truth, crop=crop)),
    ]
    mask_path = Path(cfg.path("paths.crack_mask"))
    if mask_path.exists():
        cmask = fileio.read_mask_pgm(mask_path)
        thr = cfg.crack_threshold()
        rows[0].crack_recall = crack_recall(cmask, recon, thr, crop=crop)
        rows[1].crack_recall = crack_recall(cmask, baseline.data, thr, crop=crop)
    report = MetricsReport(border_crop=crop, rows=rows)

    metrics_path = str(Path(cfg.out_dir) / "metrics.json")
    with open(metrics_path, "w") as fh:
        json.dump(report.as_dict(), fh, indent=2)
    print(report.format_table())
    return {"metrics": metrics_path, "baseline": baseline_path,
            "report": report}


def cmd_pipeline(cfg: PipelineConfig, force: bool = False) -> dict:
    """synth -> register -> reconstruct -> evaluate."""
    out = {}
    out.update(cmd_synth(cfg, force))
    out.update(cmd_register(cfg, force))
    out.update(cmd_reconstruct(cfg, force))
    out.update(cmd_evaluate(cfg, force))
    return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # map usage errors onto exit code 1
        raise ConfigError(message)


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="configuration file (key = value lines)")
    sub.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="override a config key (repeatable)")
    sub.add_argument("--out", help="output directory (overrides config 'out')")
    sub.add_argument("--seed", type=int, help="override the random seed")
    sub.add_argument("--magnification", type=int, choices=(1, 2, 3, 4),
                     help="HR scale factor (1 is a degenerate debug setting)")
    sub.add_argument("--force", action="store_true",
                     help="overwrite existing outputs")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="planarsr",
                     description="Multi-frame super-resolution of planar targets")
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)
    for name, doc in (
        ("synth", "render a synthetic dataset"),
        ("register", "estimate geometry from frames and correspondences"),
        ("reconstruct", "solve for the high-resolution image"),
        ("evaluate", "score results against ground truth"),
        ("pipeline", "synth, register, reconstruct and evaluate in sequence"),
    ):
        sub = subs.add_parser(name, help=doc, description=doc)
        _add_common(sub)
    return parser


_COMMANDS = {
    "synth": cmd_synth,
    "register": cmd_register,
    "reconstruct": cmd_reconstruct,
    "evaluate": cmd_evaluate,
    "pipeline": cmd_pipeline,
}


def _config_from_args(args: argparse.Namespace) -> PipelineConfig:
    overrides = parse_overrides(args.set)
    if args.out is not None:
        overrides["out"] = args.out
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.magnification is not None:
        overrides["magnification"] = str(args.magnification)
    return load_config(args.config, overrides)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _config_from_args(args)
        _COMMANDS[args.command](cfg, force=args.force)
        return EXIT_OK
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except PlanarSRError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
