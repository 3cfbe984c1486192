"""Noise predictors and the dual-branch L1 training objective."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .ema import EmaConfig, progressive_mask
from .grid import GridError, RngStream, as_binary_mask, as_grid, as_soft_mask, check_same_shape
from .schedule import DiffusionSchedule


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class AnalyticGaussianDenoiser:
    """Exact posterior-mean denoiser for data x0 ~ N(prior_mean, prior_var * I).

    Ignores the conditioning mask: the prior already fixes where anomalous
    content lives.
    """

    prior_mean: np.ndarray
    prior_var: float
    schedule: DiffusionSchedule

    def __post_init__(self):
        if not self.prior_var > 0:
            raise GridError("prior_var must be positive")
        object.__setattr__(self, "prior_mean", as_grid(self.prior_mean, "prior_mean"))

    def posterior_mean_x0(self, x_t, t: int) -> np.ndarray:
        t = self.schedule.check_step(t)
        ab = self.schedule.alpha_bar[t]
        s2 = self.prior_var
        num = np.sqrt(ab) * s2 * x_t + (1.0 - ab) * self.prior_mean
        return num / (ab * s2 + 1.0 - ab)

    def predict_eps(self, x_t, t: int, cond_mask=None) -> np.ndarray:
        x_t = as_grid(x_t, "x_t")
        check_same_shape(("x_t", x_t), ("prior_mean", self.prior_mean))
        x0 = self.posterior_mean_x0(x_t, t)
        sched = self.schedule
        return (x_t - sched.sqrt_alpha_bar[t] * x0) / sched.sqrt_one_minus_alpha_bar[t]


@dataclass(eq=False)
class LinearDenoiser:
    """eps_hat = gain * x_t + bias + mask_gain * cond_mask, per timestep bucket."""

    schedule: DiffusionSchedule
    gain: np.ndarray        # (buckets,)
    bias: np.ndarray        # (buckets, H, W)
    mask_gain: np.ndarray   # (buckets,)

    @classmethod
    def zeros(cls, schedule: DiffusionSchedule, shape, buckets: int = 10) -> "LinearDenoiser":
        if buckets < 1 or schedule.T % buckets:
            raise GridError(f"bucket count {buckets} must divide T={schedule.T}")
        h, w = shape
        return cls(schedule, np.zeros(buckets), np.zeros((buckets, h, w)), np.zeros(buckets))

    def __post_init__(self):
        b = self.gain.shape[0]
        if self.schedule.T % b or self.bias.shape[0] != b or self.mask_gain.shape != (b,):
            raise GridError("inconsistent bucket layout")
        for arr in (self.gain, self.bias, self.mask_gain):
            if not np.all(np.isfinite(arr)):
                raise GridError("LinearDenoiser parameters must be finite")

    @property
    def buckets(self) -> int:
        return self.gain.shape[0]

    @property
    def shape(self):
        return self.bias.shape[1:]

    def bucket(self, t: int) -> int:
        t = self.schedule.check_step(t)
        return (t - 1) * self.buckets // self.schedule.T

    def predict_eps(self, x_t, t: int, cond_mask=None) -> np.ndarray:
        x_t = as_grid(x_t, "x_t")
        k = self.bucket(t)
        if x_t.shape != self.shape:
            raise GridError(f"x_t shape {x_t.shape} does not match model {self.shape}")
        out = self.gain[k] * x_t + self.bias[k]
        if cond_mask is not None:
            out = out + self.mask_gain[k] * as_soft_mask(cond_mask, "cond_mask")
        return out

    def copy(self) -> "LinearDenoiser":
        return replace(self, gain=self.gain.copy(), bias=self.bias.copy(),
                       mask_gain=self.mask_gain.copy())


def predict_eps(model, x_t, t: int, cond_mask=None) -> np.ndarray:
    return model.predict_eps(x_t, t, cond_mask)


def predict_x0(model, x_t, t: int, cond_mask=None) -> np.ndarray:
    """Invert the forward marginal using the model's noise estimate."""
    x_t = as_grid(x_t, "x_t")
    t = model.schedule.check_step(t)
    eps_hat = model.predict_eps(x_t, t, cond_mask)
    sched = model.schedule
    return (x_t - sched.sqrt_one_minus_alpha_bar[t] * eps_hat) / sched.sqrt_alpha_bar[t]


def loss_dual_branch(eps1, eps_hat_full, eps2, eps_hat_masked, m_p) -> float:
    """Mean absolute residual of the full-image branch plus the mask-weighted
    mean absolute residual of the masked-content branch."""
    eps1 = as_grid(eps1, "eps1")
    eps_hat_full = as_grid(eps_hat_full, "eps_hat_full")
    eps2 = as_grid(eps2, "eps2")
    eps_hat_masked = as_grid(eps_hat_masked, "eps_hat_masked")
    m_p = as_soft_mask(m_p, "m_p")
    check_same_shape(("eps1", eps1), ("eps_hat_full", eps_hat_full), ("eps2", eps2),
                     ("eps_hat_masked", eps_hat_masked), ("m_p", m_p))
    full = np.mean(np.abs(eps1 - eps_hat_full))
    masked = np.mean(np.abs(m_p * (eps2 - eps_hat_masked)))
    return float(full + masked)


class BranchDenoisers(NamedTuple):
    aware: object   # trained on full images
    only: object    # trained on mask-restricted anomaly content


@dataclass(frozen=True, eq=False)
class TrainingDraw:
    """One pre-sampled training example; fixes every random choice of a step."""

    t: int
    x_t: np.ndarray
    x_t_p: np.ndarray
    eps1: np.ndarray
    eps2: np.ndarray
    m0: np.ndarray
    m_p: np.ndarray


def draw_training_batch(batch, sched: DiffusionSchedule, ema: EmaConfig,
                        rng: RngStream) -> list[TrainingDraw]:
    """Sample timestep and noises for each ``(x0, m0)`` pair in ``batch``."""
    draws = []
    for x0, m0 in batch:
        x0 = as_grid(x0, "x0")
        m0 = as_binary_mask(m0, "m0")
        t = int(rng.integers(1, sched.T + 1))
        eps1 = rng.normal(x0.shape)
        eps2 = rng.normal(x0.shape)
        a, s = sched.sqrt_alpha_bar[t], sched.sqrt_one_minus_alpha_bar[t]
        x_t = a * x0 + s * eps1
        x_t_p = a * (m0 * x0) + s * eps2
        draws.append(TrainingDraw(t, x_t, x_t_p, eps1, eps2, m0,
                                  progressive_mask(ema, m0, t)))
    return draws


@dataclass
class Gradients:
    gain: np.ndarray
    bias: np.ndarray
    mask_gain: np.ndarray

    @classmethod
    def like(cls, model: LinearDenoiser) -> "Gradients":
        return cls(np.zeros_like(model.gain), np.zeros_like(model.bias),
                   np.zeros_like(model.mask_gain))


def _accumulate(grad: Gradients, k: int, x, cond, resid, weight, scale):
    # d/d(eps_hat) of weight*|eps - eps_hat| is -weight*sign(resid)
    g = -weight * np.sign(resid) * scale
    grad.gain[k] += np.sum(g * x)
    grad.bias[k] += g
    grad.mask_gain[k] += np.sum(g * cond)


def loss_and_grad(pair: BranchDenoisers, draws: list[TrainingDraw]):
    """Batch-mean dual-branch loss and its subgradients for both branches.

    The full-image branch is conditioned on the scheduled soft mask, the
    masked-content branch on the binary mask.
    """
    aware, only = pair
    g_aware, g_only = Gradients.like(aware), Gradients.like(only)
    total = 0.0
    n = len(draws)
    for d in draws:
        hat_full = aware.predict_eps(d.x_t, d.t, d.m_p)
        hat_masked = only.predict_eps(d.x_t_p, d.t, d.m0)
        total += loss_dual_branch(d.eps1, hat_full, d.eps2, hat_masked, d.m_p)
        scale = 1.0 / (n * d.x_t.size)
        _accumulate(g_aware, aware.bucket(d.t), d.x_t, d.m_p, d.eps1 - hat_full, 1.0, scale)
        _accumulate(g_only, only.bucket(d.t), d.x_t_p, d.m0, d.eps2 - hat_masked, d.m_p, scale)
    return total / n, (g_aware, g_only)


def _stepped(model: LinearDenoiser, grad: Gradients, lr: float) -> LinearDenoiser:
    return replace(model, gain=model.gain - lr * grad.gain, bias=model.bias - lr * grad.bias,
                   mask_gain=model.mask_gain - lr * grad.mask_gain)


def train_step(pair: BranchDenoisers, batch, sched: DiffusionSchedule, ema: EmaConfig,
               rng: RngStream, lr: float = 1e-3):
    """One subgradient step on both branches; returns ``(new_pair, loss)``."""
    if not lr >= 0:
        raise TrainingError("learning rate must be non-negative")
    draws = draw_training_batch(batch, sched, ema, rng)
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            loss, (g_aware, g_only) = loss_and_grad(pair, draws)
    except GridError as exc:
        raise TrainingError(f"non-finite prediction at t={[d.t for d in draws]}: {exc}") from exc
    if not np.isfinite(loss):
        raise TrainingError(f"non-finite loss {loss!r} at t={[d.t for d in draws]}")
    if lr == 0:
        return BranchDenoisers(pair.aware.copy(), pair.only.copy()), loss
    return BranchDenoisers(_stepped(pair.aware, g_aware, lr), _stepped(pair.only, g_only, lr)), loss


@dataclass
class TrainingLog:
    losses: list = field(default_factory=list)


def train(pair: BranchDenoisers, dataset, sched: DiffusionSchedule, ema: EmaConfig,
          rng: RngStream, steps: int, lr: float = 1e-3, batch_size: int = 4):
    """Cycle through ``dataset`` in batches for ``steps`` updates."""
    log = TrainingLog()
    n = len(dataset)
    for step in range(steps):
        batch = [dataset[(step * batch_size + j) % n] for j in range(batch_size)]
        pair, loss = train_step(pair, batch, sched, ema, rng, lr)
        log.losses.append(loss)
    return pair, log
