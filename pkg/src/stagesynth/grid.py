"""Grids, masks, and reproducible Gaussian noise.

Fields are plain 2-D ``float64`` numpy arrays.  Binary masks hold exactly 0.0
or 1.0, soft masks hold values in [0, 1]; the ``as_*`` validators enforce that
at module boundaries so the arithmetic below can stay branch-free.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _accel


class GridError(ValueError):
    """Rejected input: bad shape, non-finite values, or invalid mask values."""


def as_grid(values, name: str = "grid") -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise GridError(f"{name} must be a non-empty 2-D field, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise GridError(f"{name} contains NaN or Inf")
    return np.ascontiguousarray(arr)


def as_binary_mask(values, name: str = "mask") -> np.ndarray:
    arr = as_grid(values, name)
    if not np.all((arr == 0.0) | (arr == 1.0)):
        raise GridError(f"{name} must contain only 0 and 1")
    return arr


def as_soft_mask(values, name: str = "mask") -> np.ndarray:
    arr = as_grid(values, name)
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise GridError(f"{name} values must lie in [0, 1]")
    return arr


def check_same_shape(*named: tuple[str, np.ndarray]) -> None:
    shape = named[0][1].shape
    for name, arr in named[1:]:
        if arr.shape != shape:
            raise GridError(
                f"dimension mismatch: {named[0][0]} is {shape}, {name} is {arr.shape}"
            )


def compose(mask, fg, bg) -> np.ndarray:
    """Hard per-pixel selection: ``mask*fg + (1-mask)*bg`` with a binary mask."""
    mask = as_binary_mask(mask)
    fg = as_grid(fg, "fg")
    bg = as_grid(bg, "bg")
    check_same_shape(("mask", mask), ("fg", fg), ("bg", bg))
    return mask * fg + (1.0 - mask) * bg


def soft_compose(mask, fg, bg) -> np.ndarray:
    """Convex per-pixel blend with weights in [0, 1]."""
    mask = as_soft_mask(mask)
    fg = as_grid(fg, "fg")
    bg = as_grid(bg, "bg")
    check_same_shape(("mask", mask), ("fg", fg), ("bg", bg))
    return mask * fg + (1.0 - mask) * bg


_MASK64 = (1 << 64) - 1


@dataclass
class RngStream:
    """Counter-based Gaussian source built on Philox.

    Each draw uses the Philox key ``seed`` with the draw index placed in the
    second counter word, so draw ``k`` depends only on ``(seed, k)`` and never
    on how many values earlier draws consumed.  The stream is single-owner;
    use :meth:`child` to hand independent streams to parallel tasks.
    """

    seed: int
    counter: int = 0

    def __post_init__(self):
        if not 0 <= self.seed <= _MASK64:
            raise GridError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    def _generator(self, counter: int) -> np.random.Generator:
        bitgen = np.random.Philox(
            key=np.array([self.seed, 0], dtype=np.uint64),
            counter=np.array([0, counter, 0, 0], dtype=np.uint64),
        )
        return np.random.Generator(bitgen)

    def normal(self, shape) -> np.ndarray:
        out = self._generator(self.counter).standard_normal(shape)
        self.counter += 1
        return out

    def integers(self, low: int, high: int, size=None):
        """Uniform integers in ``[low, high)``; consumes one draw index."""
        out = self._generator(self.counter).integers(low, high, size=size)
        self.counter += 1
        return out

    def child(self, key: int) -> "RngStream":
        """Independent stream for sub-task ``key``; does not advance this stream."""
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(int(key),))
        return RngStream(int(ss.generate_state(1, np.uint64)[0]))

    def split(self, n: int) -> list["RngStream"]:
        return [self.child(k) for k in range(n)]


def gaussian_field(rng: RngStream, h: int, w: int) -> np.ndarray:
    if h < 1 or w < 1:
        raise GridError(f"field size must be positive, got {h}x{w}")
    return rng.normal((h, w))


def gaussian_taps(radius: float) -> np.ndarray:
    """Normalised 1-D Gaussian taps with standard deviation ``radius``."""
    if radius < 0:
        raise GridError("blur radius must be non-negative")
    if radius == 0:
        return np.ones(1)
    half = int(np.ceil(3.0 * radius))
    x = np.arange(-half, half + 1, dtype=np.float64)
    taps = np.exp(-0.5 * (x / radius) ** 2)
    return taps / taps.sum()


def gaussian_blur(field: np.ndarray, radius: float) -> np.ndarray:
    """Separable Gaussian blur with symmetric boundary handling."""
    field = as_grid(field, "field")
    taps = gaussian_taps(radius)
    half = (taps.size - 1) // 2
    limit = min(field.shape)
    if half >= limit:
        # symmetric reflection is only defined one field-width deep
        taps = taps[half - (limit - 1): half + limit]
        taps = taps / taps.sum()
    return _accel.separable_blur(field, np.ascontiguousarray(taps))
