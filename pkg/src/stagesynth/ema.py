"""Explicit mask alignment: the linear soft-mask schedule and its error analysis.

The soft mask starts as all ones at ``t = T`` and shrinks linearly onto the
binary anomaly mask, reaching it exactly at ``t = t_s``.  The remaining
functions model per-pixel fusion of two branch predictions and compare the
scheduled weight against the per-pixel optimum.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _accel
from .grid import GridError, as_binary_mask, as_grid, as_soft_mask, check_same_shape


@dataclass(frozen=True)
class EmaConfig:
    T: int = 1000
    t_s: int = 200

    def __post_init__(self):
        if not 1 <= self.t_s < self.T:
            raise GridError(f"need 1 <= t_s < T, got t_s={self.t_s}, T={self.T}")

    def check_step(self, t: int) -> int:
        if not 0 <= t <= self.T:
            raise GridError(f"step {t} outside [0, {self.T}]")
        return int(t)


def zeta(cfg: EmaConfig, t: int) -> float:
    t = cfg.check_step(t)
    if t <= cfg.t_s:
        return 0.0
    return (t - cfg.t_s) / (cfg.T - cfg.t_s)


def progressive_mask(cfg: EmaConfig, m0, t: int) -> np.ndarray:
    m0 = as_binary_mask(m0, "m0")
    return zeta(cfg, t) * (1.0 - m0) + m0


@dataclass(frozen=True)
class PixelErrorField:
    """Prediction errors of the anomaly branch and the background branch."""

    delta_p: np.ndarray
    delta_b: np.ndarray

    def __post_init__(self):
        dp = as_grid(self.delta_p, "delta_p")
        db = as_grid(self.delta_b, "delta_b")
        check_same_shape(("delta_p", dp), ("delta_b", db))
        object.__setattr__(self, "delta_p", dp)
        object.__setattr__(self, "delta_b", db)

    @property
    def shape(self):
        return self.delta_p.shape


def pixel_error(field: PixelErrorField, w) -> np.ndarray:
    """Squared error of the blended prediction, per pixel."""
    w = as_soft_mask(w, "w")
    check_same_shape(("delta_p", field.delta_p), ("w", w))
    return (w * field.delta_p + (1.0 - w) * field.delta_b) ** 2


def optimal_weight(field: PixelErrorField, fallback=None) -> np.ndarray:
    """Per-pixel minimiser of :func:`pixel_error` over ``w in [0, 1]``.

    Pixels where the two errors (nearly) coincide have a flat error curve;
    they take the value of ``fallback`` (typically the scheduled soft mask),
    or 0 when no fallback is given.
    """
    if fallback is None:
        fallback = np.zeros(field.shape)
    fallback = as_soft_mask(fallback, "fallback")
    check_same_shape(("delta_p", field.delta_p), ("fallback", fallback))
    w_star, _, _ = _accel.weight_excess(field.delta_p, field.delta_b, fallback)
    return w_star


@dataclass(frozen=True)
class ExcessReport:
    excess: float
    bound: float

    def __iter__(self):
        return iter((self.excess, self.bound))

    @property
    def holds(self) -> bool:
        return self.excess <= self.bound * (1.0 + 1e-12) + 1e-300


def excess_error_bound(field: PixelErrorField, cfg: EmaConfig, t: int, m0) -> ExcessReport:
    """Total excess error of the scheduled weights and its deviation bound.

    ``excess`` sums ``E(w_sched) - E(w*)`` with ``w*`` the constrained optimum.
    ``bound`` sums ``gap**2 * dev**2`` where ``dev`` is the distance from the
    scheduled weight to the unconstrained stationary point; it equals the
    excess on pixels with an interior optimum and dominates it elsewhere.
    """
    m0 = as_binary_mask(m0, "m0")
    check_same_shape(("delta_p", field.delta_p), ("m0", m0))
    w_sched = progressive_mask(cfg, m0, t)
    _, excess, bound = _accel.weight_excess(field.delta_p, field.delta_b, w_sched)
    return ExcessReport(max(excess, 0.0), bound)


def max_schedule_increment(cfg: EmaConfig) -> float:
    """Largest change of the schedule between consecutive steps."""
    ts = np.arange(cfg.T + 1)
    z = np.array([zeta(cfg, int(t)) for t in ts])
    return float(np.max(np.abs(np.diff(z))))
