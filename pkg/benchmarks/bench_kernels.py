"""Timing comparison of the compiled kernels against the numpy fallback.

Run from the repository root:

    python3 benchmarks/bench_kernels.py [--repeats N]

Each hot kernel is timed on a problem sized like one frame of the default
synthetic suite (640x512 frames, 1920x1536 reconstruction at 3x).  Both
backends produce identical results up to float64 rounding; the point of
the table is the speed ratio.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from planarsr import kernels
from planarsr import _core_np


def _best_of(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def build_cases(rng: np.random.Generator):
    lr_h, lr_w = 512, 640
    hr_h, hr_w = 1536, 1920
    n_lr = lr_h * lr_w

    hr_img = rng.random((hr_h, hr_w))
    xs = rng.uniform(-2.0, hr_w + 1.0, n_lr)
    ys = rng.uniform(-2.0, hr_h + 1.0, n_lr)

    sigma = 1.2
    centers_x = rng.uniform(0.0, hr_w - 1.0, n_lr)
    centers_y = rng.uniform(0.0, hr_h - 1.0, n_lr)
    valid = np.ones(n_lr, dtype=bool)

    cases = []
    for name, mod in (("compiled", kernels), ("numpy", _core_np)):
        if name == "compiled" and kernels.BACKEND != "compiled":
            continue
        built = mod.stencil_build(centers_x, centers_y, valid, hr_h, hr_w, sigma)
        g = rng.random(n_lr)
        cases.append((name, mod, {
            "bilinear_sample": lambda mod=mod: mod.bilinear_sample(hr_img, xs, ys),
            "bicubic_sample": lambda mod=mod: mod.bicubic_sample(hr_img, xs, ys),
            "stencil_build": lambda mod=mod: mod.stencil_build(
                centers_x, centers_y, valid, hr_h, hr_w, sigma),
            "stencil_forward": lambda mod=mod, b=built: mod.stencil_forward(
                *b, hr_img),
            "stencil_adjoint": lambda mod=mod, b=built: mod.stencil_adjoint(
                *b, g, hr_h, hr_w),
            "btv_value_grad": lambda mod=mod: mod.btv_value_grad(
                hr_img, 2, 0.7, 1e-3, None),
        }))
    return cases


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=3,
                        help="repetitions per kernel; best time is reported")
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    cases = build_cases(rng)
    names = list(cases[0][2].keys())

    times: dict[str, dict[str, float]] = {}
    for backend, _mod, fns in cases:
        times[backend] = {}
        for name in names:
            times[backend][name] = _best_of(fns[name], args.repeats)

    print(f"active backend: {kernels.BACKEND}")
    header = f"{'kernel':<18}" + "".join(f"{b:>12}" for b in times) + f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for name in names:
        row = f"{name:<18}"
        for backend in times:
            row += f"{times[backend][name] * 1e3:>10.1f}ms"
        if "compiled" in times and "numpy" in times:
            ratio = times["numpy"][name] / times["compiled"][name]
            row += f"{ratio:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
