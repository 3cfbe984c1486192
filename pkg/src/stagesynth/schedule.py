"""Variance schedules, forward noising, and the reverse-step posterior."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import RngStream, as_binary_mask, as_grid


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DiffusionSchedule:
    """Per-step noise levels indexed directly by ``t`` in ``0..T``.

    Index 0 is padding with ``beta[0] = 0`` and ``alpha_bar[0] = 1``, which
    makes the final reverse step deterministic.
    """

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def __post_init__(self):
        for name in ("beta", "alpha", "alpha_bar"):
            arr = getattr(self, name)
            if arr.shape != (self.T + 1,):
                raise ScheduleError(f"{name} must have length T+1")
            arr.flags.writeable = False
        object.__setattr__(self, "sqrt_alpha_bar", np.sqrt(self.alpha_bar))
        object.__setattr__(self, "sqrt_one_minus_alpha_bar", np.sqrt(1.0 - self.alpha_bar))

    def check_step(self, t: int, lo: int = 1) -> int:
        if not lo <= t <= self.T:
            raise ScheduleError(f"step {t} outside [{lo}, {self.T}]")
        return int(t)


def build_linear_schedule(T: int = 1000, beta_start: float = 1e-4,
                          beta_end: float = 0.02) -> DiffusionSchedule:
    if T < 1:
        raise ScheduleError("T must be at least 1")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ScheduleError("need 0 < beta_start <= beta_end < 1")
    beta = np.zeros(T + 1)
    if T == 1:
        beta[1] = beta_start
    else:
        beta[1:] = np.linspace(beta_start, beta_end, T)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return DiffusionSchedule(T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar)


@dataclass(frozen=True)
class PosteriorParams:
    coef_x0: float
    coef_xt: float
    variance: float

    @property
    def sigma(self) -> float:
        return float(np.sqrt(self.variance))

    def mean(self, x0, x_t):
        return self.coef_x0 * x0 + self.coef_xt * x_t


def posterior_params(sched: DiffusionSchedule, t: int) -> PosteriorParams:
    """Coefficients of the Gaussian q(x_{t-1} | x_t, x_0)."""
    t = sched.check_step(t)
    ab_t = sched.alpha_bar[t]
    ab_prev = sched.alpha_bar[t - 1]
    beta_t = sched.beta[t]
    if ab_prev == 1.0:
        # 1 - alpha_bar_1 need not round to beta_1; the step is exact by construction
        return PosteriorParams(1.0, 0.0, 0.0)
    denom = 1.0 - ab_t
    coef_x0 = np.sqrt(ab_prev) * beta_t / denom
    coef_xt = np.sqrt(sched.alpha[t]) * (1.0 - ab_prev) / denom
    variance = (1.0 - ab_prev) / denom * beta_t
    return PosteriorParams(float(coef_x0), float(coef_xt), float(variance))


def _noised(sched, x0, t, rng):
    eps = rng.normal(x0.shape)
    return sched.sqrt_alpha_bar[t] * x0 + sched.sqrt_one_minus_alpha_bar[t] * eps


def forward_marginal(sched: DiffusionSchedule, x0, t: int, rng: RngStream) -> np.ndarray:
    """Draw x_t ~ q(x_t | x_0) for ``1 <= t <= T``."""
    t = sched.check_step(t)
    return _noised(sched, as_grid(x0, "x0"), t, rng)


def forward_marginal_with_noise(sched: DiffusionSchedule, x0, t: int, eps) -> np.ndarray:
    """Deterministic forward map for a given noise field."""
    t = sched.check_step(t)
    return sched.sqrt_alpha_bar[t] * as_grid(x0, "x0") + sched.sqrt_one_minus_alpha_bar[t] * eps


def forward_background(sched: DiffusionSchedule, x_back, t: int, rng: RngStream) -> np.ndarray:
    """Noised clean background; ``t = 0`` returns it unchanged without drawing."""
    t = sched.check_step(t, lo=0)
    x_back = as_grid(x_back, "x_back")
    if t == 0:
        return x_back.copy()
    return _noised(sched, x_back, t, rng)


def forward_mask(sched: DiffusionSchedule, m0, t: int, rng: RngStream) -> np.ndarray:
    """The binary mask pushed through the image forward process as a real field."""
    t = sched.check_step(t, lo=0)
    m0 = as_binary_mask(m0, "m0")
    if t == 0:
        return m0.copy()
    return _noised(sched, m0, t, rng)

