"""Binary grid files, PGM export, and the line-delimited batch manifest.

GridFile layout (all little-endian)::

    offset  size  field
    0       4     magic b"STGE"
    4       2     format version (uint16), currently 1
    6       4     height (uint32)
    10      4     width (uint32)
    14      8*h*w payload, float64, row-major
"""
from __future__ import annotations

import json
import re
import struct
from pathlib import Path

import numpy as np

from .grid import as_grid

MAGIC = b"STGE"
VERSION = 1
_HEADER = struct.Struct("<4sHII")
_PGM_HEADER = re.compile(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s")


class GridFormatError(ValueError):
    """Base class for malformed grid files."""


class MalformedHeaderError(GridFormatError):
    pass


class UnsupportedVersionError(GridFormatError):
    pass


class TruncatedPayloadError(GridFormatError):
    pass


class TrailingDataError(GridFormatError):
    pass


def encode_grid(grid) -> bytes:
    grid = as_grid(grid)
    h, w = grid.shape
    return _HEADER.pack(MAGIC, VERSION, h, w) + grid.astype("<f8").tobytes(order="C")


def decode_grid(data: bytes) -> np.ndarray:
    if len(data) < _HEADER.size:
        raise MalformedHeaderError(f"header needs {_HEADER.size} bytes, got {len(data)}")
    magic, version, h, w = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise MalformedHeaderError(f"bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported format version {version}")
    if h < 1 or w < 1:
        raise MalformedHeaderError(f"invalid dimensions {h}x{w}")
    expected = 8 * h * w
    payload = len(data) - _HEADER.size
    if payload < expected:
        raise TruncatedPayloadError(f"{h}x{w} grid needs {expected} payload bytes, got {payload}")
    if payload > expected:
        raise TrailingDataError(f"{payload - expected} unexpected bytes after payload")
    arr = np.frombuffer(data, dtype="<f8", count=h * w, offset=_HEADER.size)
    return arr.astype(np.float64).reshape(h, w)


def write_grid(path, grid) -> None:
    Path(path).write_bytes(encode_grid(grid))


def read_grid(path) -> np.ndarray:
    return decode_grid(Path(path).read_bytes())


def pgm_bytes(grid, lo: float, hi: float) -> bytes:
    """8-bit P5 image; values are mapped linearly from [lo, hi] onto [0, 255],
    clamped, and rounded half-to-even."""
    if not lo < hi:
        raise ValueError("need lo < hi")
    grid = as_grid(grid)
    scaled = (grid - lo) / (hi - lo) * 255.0
    pixels = np.rint(np.clip(scaled, 0.0, 255.0)).astype(np.uint8)
    h, w = grid.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def export_pgm(grid, path, lo: float, hi: float) -> None:
    Path(path).write_bytes(pgm_bytes(grid, lo, hi))


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    m = _PGM_HEADER.match(data)
    if m is None or int(m.group(3)) != 255:
        raise ValueError("expected an 8-bit P5 file")
    w, h = int(m.group(1)), int(m.group(2))
    return np.frombuffer(data, dtype=np.uint8, count=w * h, offset=m.end()).reshape(h, w)


def write_manifest(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_manifest(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


# LinearDenoiser checkpoints: a numpy ``.npz`` archive holding, per branch
# ("aware", "only"), the arrays ``<branch>_gain`` (B,), ``<branch>_bias``
# (B, H, W) and ``<branch>_mask_gain`` (B,), plus the float64 array
# ``schedule`` = [T, beta_start, beta_end].

def save_checkpoint(path, pair, beta_start: float, beta_end: float) -> None:
    arrays = {"schedule": np.array([pair.aware.schedule.T, beta_start, beta_end], dtype=float)}
    for name, model in zip(("aware", "only"), pair):
        arrays[f"{name}_gain"] = model.gain
        arrays[f"{name}_bias"] = model.bias
        arrays[f"{name}_mask_gain"] = model.mask_gain
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    from .denoiser import BranchDenoisers, LinearDenoiser
    from .schedule import build_linear_schedule

    with np.load(path) as data:
        T, b0, b1 = data["schedule"]
        sched = build_linear_schedule(int(T), float(b0), float(b1))
        models = [LinearDenoiser(sched, data[f"{n}_gain"], data[f"{n}_bias"],
                                 data[f"{n}_mask_gain"]) for n in ("aware", "only")]
    return BranchDenoisers(*models)
