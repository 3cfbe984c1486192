"""Reverse-process samplers: plain DDPM, background-conditioned mixture, graded dual-branch."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _accel
from .denoiser import BranchDenoisers, predict_x0
from .ema import EmaConfig, progressive_mask, zeta
from .grid import GridError, RngStream, as_binary_mask, as_grid, check_same_shape
from .schedule import DiffusionSchedule, forward_background, forward_mask, posterior_params

log = logging.getLogger(__name__)

AWARE = "aware"
ONLY = "only"


def _noise(rng: RngStream, shape, variance: float) -> np.ndarray:
    # deterministic steps draw nothing, keeping stream positions aligned
    if variance == 0.0:
        return np.zeros(shape)
    return rng.normal(shape)


def ddpm_step(sched: DiffusionSchedule, denoiser, x_t, t: int, rng: RngStream,
              cond_mask=None) -> np.ndarray:
    """Sample x_{t-1} from the posterior with x0 replaced by the model estimate."""
    x_t = as_grid(x_t, "x_t")
    post = posterior_params(sched, t)
    x0_hat = predict_x0(denoiser, x_t, t, cond_mask)
    eps = _noise(rng, x_t.shape, post.variance)
    return post.coef_x0 * x0_hat + post.coef_xt * x_t + post.sigma * eps


def anomaly_inference_step(sched: DiffusionSchedule, denoiser, x_t, x_back, m0, t: int,
                           rng: RngStream, cond_mask=None) -> np.ndarray:
    """Spatial mixture step: model posterior inside the mask, clean-background
    posterior outside, one shared noise draw for both regions."""
    x_t = as_grid(x_t, "x_t")
    x_back = as_grid(x_back, "x_back")
    m0 = as_binary_mask(m0, "m0")
    check_same_shape(("x_t", x_t), ("x_back", x_back), ("m0", m0))
    post = posterior_params(sched, t)
    x0_hat = predict_x0(denoiser, x_t, t, m0 if cond_mask is None else cond_mask)
    eps = _noise(rng, x_t.shape, post.variance)
    return _accel.mixture_step(m0, x0_hat, x_back, x_t, post.coef_x0, post.coef_xt,
                               post.sigma, eps)


def mixture_mean(sched: DiffusionSchedule, x0_hat, x_back, x_t, m0, t: int) -> np.ndarray:
    """Composite posterior mean of :func:`anomaly_inference_step` for a given x0 estimate."""
    post = posterior_params(sched, t)
    mu_p = post.mean(m0 * x0_hat, m0 * x_t)
    mu_b = post.mean(x_back, (1.0 - m0) * x_t)
    return m0 * mu_p + (1.0 - m0) * mu_b


def _normalize_intervals(intervals, T: int) -> tuple[tuple[int, int], ...]:
    out = []
    for iv in intervals:
        if len(iv) != 2:
            raise GridError(f"interval {iv!r} must have two endpoints")
        lo, hi = sorted(int(v) for v in iv)
        if lo < 0 or hi > T:
            raise GridError(f"interval {iv!r} outside [0, {T}]")
        out.append((lo, hi))
    out.sort()
    for (_, a_hi), (b_lo, _) in zip(out, out[1:]):
        if b_lo <= a_hi:
            raise GridError(f"intervals overlap: {out}")
    return tuple(out)


@dataclass(frozen=True, eq=False)
class GradedPlan:
    """Sampler configuration.

    ``intervals`` are inclusive step ranges in which the masked-content branch
    drives the update; endpoints may be given in either order.
    """

    schedule: DiffusionSchedule
    ema: EmaConfig
    intervals: tuple = ((800, 1000), (300, 400))
    seed: int = 0

    def __post_init__(self):
        if self.ema.T != self.schedule.T:
            raise GridError("EMA and diffusion schedule disagree on T")
        object.__setattr__(self, "intervals", _normalize_intervals(self.intervals, self.schedule.T))

    def only_active(self, t: int) -> bool:
        return any(lo <= t <= hi for lo, hi in self.intervals)


@dataclass(frozen=True)
class TraceEntry:
    t: int
    branch: str
    zeta: float


@dataclass(eq=False)
class SamplerState:
    x_hat: np.ndarray
    x_hat_p: np.ndarray
    t: int


@dataclass(eq=False)
class GradedResult:
    x0: np.ndarray
    x0_p: np.ndarray
    trace: list = field(default_factory=list)
    states: list | None = None


def graded_sample(plan: GradedPlan, denoisers: BranchDenoisers, m0, x_back,
                  rng: RngStream | None = None, record_states: bool = False,
                  verbose: bool = False) -> GradedResult:
    """Run the dual-branch reverse loop from ``t = T`` down to ``t = 0``.

    Per step the random draws happen in a fixed order: noised background,
    noised mask, then the branch's posterior noise (skipped at ``t = 1``).
    The initial latent is drawn first and seeds both state fields.
    """
    m0 = as_binary_mask(m0, "m0")
    x_back = as_grid(x_back, "x_back")
    check_same_shape(("m0", m0), ("x_back", x_back))
    sched, ema = plan.schedule, plan.ema
    if rng is None:
        rng = RngStream(plan.seed)
    verbose = verbose or log.isEnabledFor(logging.DEBUG)

    x_hat = rng.normal(m0.shape)
    x_hat_p = x_hat.copy()
    mask_p = np.ones(m0.shape)
    trace = []
    states = [SamplerState(x_hat, x_hat_p, sched.T)] if record_states else None

    for t in range(sched.T, 0, -1):
        mask_p_prev = progressive_mask(ema, m0, t - 1)
        back_prev = forward_background(sched, x_back, t - 1, rng)
        mask_noised = forward_mask(sched, m0, t - 1, rng)
        if plan.only_active(t):
            branch = ONLY
            proposal = ddpm_step(sched, denoisers.only, x_hat_p, t, rng, cond_mask=m0)
            x_hat_p, x_hat = _accel.blend_pair(m0, proposal, mask_noised, m0, back_prev)
        else:
            branch = AWARE
            proposal = anomaly_inference_step(sched, denoisers.aware, x_hat, x_back, m0, t,
                                              rng, cond_mask=mask_p)
            x_hat, x_hat_p = _accel.blend_pair(mask_p_prev, proposal, back_prev, m0, mask_noised)
        mask_p = mask_p_prev
        entry = TraceEntry(t, branch, zeta(ema, t - 1))
        trace.append(entry)
        if verbose:
            log.debug("step=%d branch=%s zeta=%.6f", entry.t, entry.branch, entry.zeta)
        if record_states:
            states.append(SamplerState(x_hat, x_hat_p, t - 1))
        if not (np.all(np.isfinite(x_hat)) and np.all(np.isfinite(x_hat_p))):
            raise FloatingPointError(f"sampler state became non-finite at t={t}")

    return GradedResult(x_hat, x_hat_p, trace, states)


def background_fidelity(x0_hat, x_back, m0) -> float:
    """Largest absolute deviation from the background outside the mask."""
    x0_hat = as_grid(x0_hat, "x0_hat")
    x_back = as_grid(x_back, "x_back")
    m0 = as_binary_mask(m0, "m0")
    check_same_shape(("x0_hat", x0_hat), ("x_back", x_back), ("m0", m0))
    outside = m0 == 0.0
    if not outside.any():
        return 0.0
    return float(np.max(np.abs(x0_hat[outside] - x_back[outside])))


def run_chain(sched: DiffusionSchedule, denoiser, shape, rng: RngStream) -> np.ndarray:
    """Plain ancestral sampling from pure noise with :func:`ddpm_step`."""
    x = rng.normal(shape)
    for t in range(sched.T, 0, -1):
        x = ddpm_step(sched, denoiser, x, t, rng)
    return x
