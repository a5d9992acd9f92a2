"""On-disk formats: 16-bit PGM images and small line-oriented text files.

All text formats accept ``#`` comments and blank lines; parse failures
report the offending line number.  PGM is binary P5 with big-endian 16-bit
samples (maxval 65535) when written; 8-bit files are accepted on read.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .errors import DataError
from .geometry import CameraModel, Homography
from .registration import CorrespondenceSet, RegistrationResult

PGM_MAXVAL = 65535


def write_pgm(path, image) -> None:
    """Write a float image in [0, 1] as 16-bit binary PGM."""
    data = np.asarray(getattr(image, "data", image), dtype=np.float64)
    if data.ndim != 2:
        raise ValueError(f"image must be 2-D, got shape {data.shape}")
    quant = np.clip(np.rint(data * PGM_MAXVAL), 0, PGM_MAXVAL).astype(">u2")
    header = f"P5\n{data.shape[1]} {data.shape[0]}\n{PGM_MAXVAL}\n"
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(quant.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM into float64 scaled to [0, 1]."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"image file not found: {path}")
    raw = path.read_bytes()
    if not raw.startswith(b"P5"):
        raise DataError(f"{path}: not a binary PGM (missing P5 magic)")

    # header: magic, width, height, maxval as whitespace-separated tokens,
    # with '#' comments running to end of line
    tokens = []
    pos = 2
    while len(tokens) < 3:
        if pos >= len(raw):
            raise DataError(f"{path}: truncated PGM header")
        ch = raw[pos:pos + 1]
        if ch == b"#":
            eol = raw.find(b"\n", pos)
            pos = len(raw) if eol < 0 else eol + 1
        elif ch.isspace():
            pos += 1
        else:
            end = pos
            while end < len(raw) and not raw[end:end + 1].isspace():
                end += 1
            tokens.append(raw[pos:end])
            pos = end
    pos += 1  # single whitespace after maxval
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise DataError(f"{path}: malformed PGM header: {exc}") from exc
    if not (0 < maxval < 65536):
        raise DataError(f"{path}: unsupported maxval {maxval}")
    dtype = ">u2" if maxval > 255 else np.uint8
    count = width * height
    body = raw[pos:]
    expected = count * np.dtype(dtype).itemsize
    if len(body) < expected:
        raise DataError(f"{path}: expected {expected} data bytes, found {len(body)}")
    data = np.frombuffer(body[:expected], dtype=dtype).reshape(height, width)
    return data.astype(np.float64) / maxval


def write_mask_pgm(path, mask) -> None:
    write_pgm(path, np.asarray(mask, dtype=np.float64))


def read_mask_pgm(path) -> np.ndarray:
    return read_pgm(path) >= 0.5


def _fmt(x: float) -> str:
    return repr(float(x))


def write_registration(path, reg: RegistrationResult) -> None:
    """Serialize a registration: frame size, camera, one line per frame."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["# registration v1"]
    if reg.lr_shape is not None:
        lines.append(f"size {reg.lr_shape[1]} {reg.lr_shape[0]}")
    cam = reg.camera
    lines.append(
        "camera " + " ".join(_fmt(v) for v in
                             (cam.fx, cam.fy, cam.cx, cam.cy, cam.skew, cam.kappa))
    )
    for i, hom in enumerate(reg.homographies):
        entries = " ".join(_fmt(v) for v in hom.matrix.ravel())
        lines.append(
            f"frame {i} {entries} {_fmt(reg.residuals[i])} "
            f"{_fmt(reg.reprojection_rms[i])}"
        )
    path.write_text("\n".join(lines) + "\n")


def read_registration(path) -> RegistrationResult:
    path = Path(path)
    if not path.exists():
        raise DataError(f"registration file not found: {path}")
    camera = None
    lr_shape = None
    frames: dict[int, tuple] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        parts = text.split()
        try:
            if parts[0] == "size":
                if len(parts) != 3:
                    raise ValueError("expected 'size <width> <height>'")
                lr_shape = (int(parts[2]), int(parts[1]))
            elif parts[0] == "camera":
                if len(parts) != 7:
                    raise ValueError("expected 6 camera parameters")
                vals = [float(p) for p in parts[1:]]
                camera = CameraModel(fx=vals[0], fy=vals[1], cx=vals[2],
                                     cy=vals[3], skew=vals[4], kappa=vals[5])
            elif parts[0] == "frame":
                if len(parts) != 13:
                    raise ValueError(
                        "expected 'frame <i> <9 homography entries> "
                        "<residual> <reprojection>'"
                    )
                idx = int(parts[1])
                vals = [float(p) for p in parts[2:]]
                hom = Homography(np.array(vals[:9]).reshape(3, 3))
                frames[idx] = (hom, vals[9], vals[10])
            else:
                raise ValueError(f"unknown record {parts[0]!r}")
        except DataError:
            raise
        except Exception as exc:  # rewrap with file/line location
            raise DataError(f"{path}:{lineno}: {exc}") from exc
    if camera is None:
        raise DataError(f"{path}: no camera record")
    if not frames:
        raise DataError(f"{path}: no frame records")
    n = max(frames) + 1
    if sorted(frames) != list(range(n)):
        raise DataError(f"{path}: frame indices must cover 0..{n - 1}")
    homs = [frames[i][0] for i in range(n)]
    residuals = np.array([frames[i][1] for i in range(n)])
    reproj = np.array([frames[i][2] for i in range(n)])
    return RegistrationResult(homs, camera, residuals, reproj, lr_shape)


def write_correspondences(path, sets: list[CorrespondenceSet]) -> None:
    """One line per match: ``frame_index y1 y2 u v``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["# correspondences: frame_index y1 y2 u v"]
    for s in sorted(sets, key=lambda s: s.frame_index):
        for (y1, y2), (u, v) in zip(s.module_points, s.pixel_points):
            lines.append(f"{s.frame_index} {_fmt(y1)} {_fmt(y2)} {_fmt(u)} {_fmt(v)}")
    path.write_text("\n".join(lines) + "\n")


def read_correspondences(path) -> list[CorrespondenceSet]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"correspondence file not found: {path}")
    by_frame: dict[int, list[list[float]]] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        parts = text.split()
        if len(parts) != 5:
            raise DataError(
                f"{path}:{lineno}: expected 'frame_index y1 y2 u v', got "
                f"{len(parts)} fields"
            )
        try:
            idx = int(parts[0])
            vals = [float(p) for p in parts[1:]]
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
        by_frame.setdefault(idx, []).append(vals)
    if not by_frame:
        raise DataError(f"{path}: no correspondence records")
    sets = []
    for idx in sorted(by_frame):
        arr = np.asarray(by_frame[idx])
        sets.append(CorrespondenceSet(idx, arr[:, 0:2], arr[:, 2:4]))
    return sets


def read_config_file(path) -> dict[str, str]:
    """Parse ``key = value`` lines with '#' comments into a flat dict."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"config file not found: {path}")
    out: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise DataError(f"{path}:{lineno}: expected 'key = value'")
        key, value = text.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key:
            raise DataError(f"{path}:{lineno}: empty key")
        out[key] = value
    return out


def write_config_file(path, values: dict[str, str]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{k} = {values[k]}" for k in sorted(values)]
    path.write_text("\n".join(lines) + "\n")
