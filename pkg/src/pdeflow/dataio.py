"""Volume-series container, signal conversion, Rician noise and exports.

Container layout ("PFVS v1"): a JSON header next to a raw payload of
little-endian float32 (or uint8 for masks) values, x-fastest within a
frame, frames concatenated in order.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, GridMismatchError, ValidationError
from .grid import DomainMask, Grid3, ScalarField

__all__ = [
    "VolumeSeries",
    "SignalSeries",
    "signal_to_concentration",
    "add_rician_noise",
    "read_series",
    "write_series",
    "read_mask",
    "write_mask",
    "export_slice_pgm",
    "export_csv",
]

log = logging.getLogger(__name__)

MAGIC = "PFVS"
VERSION = 1


def _frames_array(grid: Grid3, frames) -> np.ndarray:
    if isinstance(frames, (list, tuple)):
        frames = [f.values if isinstance(f, ScalarField) else f for f in frames]
    arr = np.array(frames, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[1:] != grid.dims:
        raise GridMismatchError(f"frames of shape {arr.shape} do not fit grid {grid.dims}")
    if arr.shape[0] < 1:
        raise ValidationError("a series needs at least one frame")
    return arr


@dataclass(eq=False)
class VolumeSeries:
    """Concentration frames ``frames[i]`` at times ``i * dt_frames`` (s)."""

    grid: Grid3
    dt_frames: float
    frames: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = _frames_array(self.grid, self.frames)
        if not (self.dt_frames > 0 and math.isfinite(self.dt_frames)):
            raise ValidationError(f"dt_frames must be > 0, got {self.dt_frames}")
        self.dt_frames = float(self.dt_frames)
        if not np.all(np.isfinite(self.frames)):
            raise ValidationError("series contains non-finite values")

    def __len__(self):
        return self.frames.shape[0]

    @property
    def T(self) -> int:
        """Index of the last frame."""
        return self.frames.shape[0] - 1

    def frame(self, i: int) -> ScalarField:
        return ScalarField(self.grid, self.frames[i])

    def window(self, start: int, length: int) -> "VolumeSeries":
        return VolumeSeries(self.grid, self.dt_frames, self.frames[start : start + length].copy(), dict(self.meta))


@dataclass(eq=False)
class SignalSeries:
    """Raw scanner signal; ``meta["baseline_frames"]`` records ``B``."""

    grid: Grid3
    dt_frames: float
    frames: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = _frames_array(self.grid, self.frames)
        if not (self.dt_frames > 0):
            raise ValidationError("dt_frames must be > 0")


def signal_to_concentration(s: SignalSeries, b: int | None = None, kmr_over_te: float = 1.0) -> VolumeSeries:
    """``C = -(k_mr/TE) ln(S / S0)`` with ``S0`` the mean of the first ``b`` frames.

    Voxels with a nonpositive signal or baseline get ``C = 0``; negative
    concentrations are clamped to 0.  Both counts land in ``meta``.
    """
    if b is None:
        b = int(s.meta.get("baseline_frames", 1))
    if not 1 <= b <= len(s.frames):
        raise ValidationError(f"baseline frame count {b} outside [1, {len(s.frames)}]")
    if not kmr_over_te > 0:
        raise ValidationError("kmr_over_te must be > 0")
    sig = s.frames
    s0 = sig[:b].mean(axis=0)
    valid = (sig > 0) & (s0 > 0)[None]
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(valid, -kmr_over_te * np.log(np.where(valid, sig, 1.0) / np.where(s0 > 0, s0, 1.0)[None]), 0.0)
    negative = c < 0
    n_neg = int(negative.sum())
    c[negative] = 0.0
    meta = dict(s.meta)
    meta.update(baseline_frames=b, kmr_over_te=kmr_over_te, invalid_signal=int((~valid).sum()), clamped_negative=n_neg)
    if n_neg:
        log.info("clamped %d negative concentrations to 0", n_neg)
    return VolumeSeries(s.grid, s.dt_frames, c, meta)


def add_rician_noise(v: VolumeSeries, level: float, seed: int, scale: str = "frame_max") -> VolumeSeries:
    """Rician corruption ``sqrt((C + n1)^2 + n2^2)`` with ``n1, n2 ~ N(0, sigma^2)``.

    ``scale="frame_max"`` uses ``sigma = level * max(frame)``;
    ``scale="pointwise"`` uses ``sigma = level * C`` per voxel.  Every frame
    draws from its own substream of ``seed``.
    """
    if not level >= 0:
        raise ValidationError("noise level must be >= 0")
    if scale not in ("frame_max", "pointwise"):
        raise ValidationError(f"unknown noise scale {scale!r}")
    meta = dict(v.meta, noise_level=level, noise_seed=seed, noise_scale=scale)
    if level == 0:
        return VolumeSeries(v.grid, v.dt_frames, v.frames.copy(), meta)
    streams = np.random.SeedSequence(seed).spawn(len(v))
    out = np.empty_like(v.frames)
    for i, (frame, ss) in enumerate(zip(v.frames, streams)):
        rng = np.random.default_rng(ss)
        sigma = level * frame.max() if scale == "frame_max" else level * np.abs(frame)
        n1 = rng.standard_normal(frame.shape) * sigma
        n2 = rng.standard_normal(frame.shape) * sigma
        out[i] = np.sqrt((frame + n1) ** 2 + n2**2)
    return VolumeSeries(v.grid, v.dt_frames, out, meta)


# -- container ---------------------------------------------------------------

def _header_paths(path) -> tuple[Path, Path]:
    path = Path(path)
    if path.suffix != ".json":
        path = path.with_suffix(".json")
    return path, path.with_suffix(".raw")


def _write(path, grid: Grid3, dt_s: float, payload: np.ndarray, dtype: str, meta: dict) -> Path:
    header_path, data_path = _header_paths(path)
    header_path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "magic": MAGIC,
        "version": VERSION,
        "dims": list(grid.dims),
        "spacing_mm": list(grid.spacing),
        "dt_s": dt_s,
        "frames": int(payload.shape[0]),
        "dtype": dtype,
        "data_file": data_path.name,
        "meta": meta,
    }
    np_dtype = "<f4" if dtype == "f32le" else "u1"
    # x-fastest within each frame
    flat = np.stack([f.ravel(order="F") for f in payload]).astype(np_dtype)
    data_path.write_bytes(flat.tobytes())
    header_path.write_text(json.dumps(header, indent=2, sort_keys=True, default=_json_default) + "\n")
    return header_path


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _read(path, expect_dtype: str):
    header_path, _ = _header_paths(path)
    try:
        header = json.loads(Path(header_path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read header {header_path}: {exc}") from exc
    if header.get("magic") != MAGIC or header.get("version") != VERSION:
        raise FormatError(f"{header_path}: not a PFVS v1 header")
    for key in ("dims", "spacing_mm", "dt_s", "frames", "dtype", "data_file"):
        if key not in header:
            raise FormatError(f"{header_path}: header lacks {key!r}")
    if header["dtype"] != expect_dtype:
        raise FormatError(f"{header_path}: dtype {header['dtype']!r}, expected {expect_dtype!r}")
    dims = header["dims"]
    if len(dims) != 3 or any(not isinstance(n, int) or n < 1 for n in dims):
        raise FormatError(f"{header_path}: invalid dims {dims}")
    try:
        grid = Grid3(tuple(dims), tuple(header["spacing_mm"]))
    except ValidationError as exc:
        raise FormatError(f"{header_path}: {exc}") from exc
    n_frames = header["frames"]
    if not isinstance(n_frames, int) or n_frames < 1:
        raise FormatError(f"{header_path}: invalid frame count {n_frames}")
    itemsize = 4 if expect_dtype == "f32le" else 1
    data_path = Path(header_path).parent / header["data_file"]
    try:
        raw = data_path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read data file {data_path}: {exc}") from exc
    expected = n_frames * grid.size * itemsize
    if len(raw) != expected:
        raise FormatError(f"{data_path}: expected {expected} bytes, found {len(raw)}")
    flat = np.frombuffer(raw, dtype="<f4" if itemsize == 4 else "u1").reshape(n_frames, grid.size)
    frames = np.stack([f.reshape(grid.dims, order="F") for f in flat])
    return header, grid, frames


def write_series(v: VolumeSeries, path) -> Path:
    """Write ``v`` as ``<path>.json`` + ``<path>.raw``; returns the header path."""
    return _write(path, v.grid, v.dt_frames, v.frames, "f32le", v.meta)


def read_series(path) -> VolumeSeries:
    header, grid, frames = _read(path, "f32le")
    frames = frames.astype(np.float64)
    if not np.all(np.isfinite(frames)):
        raise FormatError(f"{path}: payload contains non-finite values")
    meta = dict(header.get("meta") or {})
    # signed payloads (velocity components) skip the concentration clamp
    neg = frames < 0 if not meta.get("signed") else np.zeros(frames.shape, bool)
    if neg.any():
        n = int(neg.sum())
        log.warning("%s: clamped %d negative concentrations to 0", path, n)
        frames[neg] = 0.0
        meta["clamped_negative_on_read"] = n
    try:
        return VolumeSeries(grid, header["dt_s"], frames, meta)
    except ValidationError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def write_mask(mask: DomainMask, path) -> Path:
    meta = {"kind": "mask", "dirichlet_slabs": bool(mask.dirichlet.any())}
    return _write(path, mask.grid, 1.0, mask.inside[None].astype(np.uint8), "u8", meta)


def read_mask(path, dirichlet_slabs: bool | None = None) -> DomainMask:
    header, grid, frames = _read(path, "u8")
    if frames.shape[0] != 1:
        raise FormatError(f"{path}: a mask holds exactly one frame")
    if np.any(frames > 1):
        raise FormatError(f"{path}: mask payload must be 0/1")
    if dirichlet_slabs is None:
        dirichlet_slabs = (header.get("meta") or {}).get("dirichlet_slabs")
    return DomainMask.from_inside(grid, frames[0].astype(bool), dirichlet_slabs)


# -- exports -----------------------------------------------------------------

def export_slice_pgm(f, axis: int, index: int, value_range: tuple[float, float], path) -> Path:
    """Write one slice as a 16-bit binary PGM.

    ``value_range`` maps linearly onto ``[0, 65535]``, out-of-range values
    clamp.  Image columns run along the lower remaining axis, rows along the
    higher one.
    """
    vals = f.values if isinstance(f, ScalarField) else np.asarray(f, dtype=np.float64)
    if not 0 <= axis < 3:
        raise ValidationError("axis must be 0, 1 or 2")
    if not 0 <= index < vals.shape[axis]:
        raise ValidationError(f"slice index {index} out of range for axis {axis}")
    lo, hi = float(value_range[0]), float(value_range[1])
    if not hi > lo:
        raise ValidationError("value_range must be increasing")
    sl = np.take(vals, index, axis=axis)  # shape (N_a, N_b), a < b
    img = sl.T
    with np.errstate(invalid="ignore"):
        scaled = np.clip((img - lo) / (hi - lo), 0.0, 1.0)
    scaled = np.where(np.isnan(scaled), 0.0, scaled)
    pix = np.rint(scaled * 65535).astype(">u2")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    h, w = pix.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(pix.tobytes())
    return path


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.9g}" if math.isfinite(x) else ""
    return str(x)


def export_csv(path, header, rows) -> Path:
    """UTF-8 CSV with a mandatory header; non-finite numbers are left empty."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(header))
        for row in rows:
            w.writerow([_fmt(x) for x in row])
    return path
