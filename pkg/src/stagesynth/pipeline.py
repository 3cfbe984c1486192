"""End-to-end synthesis of anomaly image/mask pairs on synthetic backgrounds."""
from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .denoiser import AnalyticGaussianDenoiser, BranchDenoisers
from .grid import GridError, RngStream, as_binary_mask, as_grid, check_same_shape, gaussian_blur
from .sampler import GradedPlan, background_fidelity, graded_sample
from .schedule import DiffusionSchedule


@dataclass(frozen=True)
class MaskSpec:
    target_area_fraction: float = 0.1
    smoothness: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.target_area_fraction < 1.0:
            raise GridError("target_area_fraction must lie strictly between 0 and 1")
        if self.smoothness < 0:
            raise GridError("smoothness must be non-negative")


@dataclass(frozen=True)
class BackgroundSpec:
    kind: str = "random-field"
    value: float = 0.0
    radius: float = 2.0

    def __post_init__(self):
        if self.kind not in ("constant", "random-field"):
            raise GridError(f"unknown background kind {self.kind!r}")
        if self.radius < 0 or not np.isfinite(self.value):
            raise GridError("invalid background parameters")


@dataclass(frozen=True)
class SynthesisReport:
    energy_in_mask: float
    iou_thresholded: float
    background_max_dev: float
    runtime_ms: float = 0.0


def generate_mask(spec: MaskSpec, h: int, w: int) -> np.ndarray:
    """Threshold a smoothed noise field so the mask covers the target fraction."""
    field = gaussian_blur(RngStream(spec.seed).normal((h, w)), spec.smoothness)
    n_on = int(round(spec.target_area_fraction * h * w))
    n_on = min(max(n_on, 1), h * w - 1) if h * w > 1 else n_on
    order = np.argsort(field, axis=None, kind="stable")
    mask = np.zeros(h * w)
    mask[order[h * w - n_on:]] = 1.0
    return mask.reshape(h, w)


def generate_background(spec: BackgroundSpec, h: int, w: int, rng: RngStream) -> np.ndarray:
    if spec.kind == "constant":
        return np.full((h, w), float(spec.value))
    field = gaussian_blur(rng.normal((h, w)), spec.radius)
    std = field.std()
    if std == 0:
        raise GridError("degenerate random field")
    return (field - field.mean()) / std


def alignment_metrics(image, x_back, m0, threshold: float) -> SynthesisReport:
    if not threshold > 0:
        raise GridError("threshold must be positive")
    image = as_grid(image, "image")
    x_back = as_grid(x_back, "x_back")
    m0 = as_binary_mask(m0, "m0")
    check_same_shape(("image", image), ("x_back", x_back), ("m0", m0))
    resid = np.abs(image - x_back)
    total = resid.sum()
    energy = 1.0 if total == 0 else float((resid * m0).sum() / total)
    detected = resid > threshold
    inside = m0 == 1.0
    union = np.count_nonzero(detected | inside)
    iou = 0.0 if union == 0 else np.count_nonzero(detected & inside) / union
    return SynthesisReport(energy, float(iou), background_fidelity(image, x_back, m0))


@dataclass(frozen=True, eq=False)
class AnalyticPriorFactory:
    """Builds analytic branch denoisers for a given mask and background.

    The full-image prior mean is the background shifted by ``offset`` inside
    the mask; the masked-content prior mean is that field restricted to the
    mask.  Picklable, so it can be shipped to worker processes.
    """

    schedule: DiffusionSchedule
    offset: float = 2.0
    prior_var: float = 0.25

    def __call__(self, m0, x_back) -> BranchDenoisers:
        anomalous = x_back + self.offset * m0
        return BranchDenoisers(
            AnalyticGaussianDenoiser(anomalous, self.prior_var, self.schedule),
            AnalyticGaussianDenoiser(m0 * anomalous, self.prior_var, self.schedule),
        )


class PairOutput(NamedTuple):
    image: np.ndarray
    mask: np.ndarray
    report: SynthesisReport
    background: np.ndarray


@dataclass(eq=False)
class SynthesizedPair:
    seed: int
    image: np.ndarray
    mask: np.ndarray
    background: np.ndarray
    report: SynthesisReport


def synthesize_pair(plan: GradedPlan, denoisers, mask_spec: MaskSpec, bg_spec: BackgroundSpec,
                    h: int, w: int, threshold: float, rng: RngStream | None = None):
    """Generate one anomaly image with its mask, metrics, and clean background.

    ``denoisers`` is either a fixed :class:`BranchDenoisers` or a callable
    ``(mask, background) -> BranchDenoisers``.
    """
    start = time.perf_counter()
    rng = RngStream(plan.seed) if rng is None else rng
    m0 = generate_mask(mask_spec, h, w)
    x_back = generate_background(bg_spec, h, w, rng.child(1))
    pair = denoisers if isinstance(denoisers, BranchDenoisers) else denoisers(m0, x_back)
    result = graded_sample(plan, pair, m0, x_back, rng.child(2))
    report = alignment_metrics(result.x0, x_back, m0, threshold)
    elapsed = (time.perf_counter() - start) * 1e3
    report = SynthesisReport(report.energy_in_mask, report.iou_thresholded,
                             report.background_max_dev, elapsed)
    return PairOutput(result.x0, m0, report, x_back)


def pair_seeds(seed: int, count: int) -> list[int]:
    return [s.seed for s in RngStream(seed).split(count)]


def synthesize_one(job) -> SynthesizedPair:
    plan, denoisers, mask_spec, bg_spec, h, w, threshold, pair_seed = job
    rng = RngStream(pair_seed)
    spec = MaskSpec(mask_spec.target_area_fraction, mask_spec.smoothness, rng.child(0).seed)
    image, mask, report, back = synthesize_pair(plan, denoisers, spec, bg_spec, h, w,
                                                threshold, rng)
    return SynthesizedPair(pair_seed, image, mask, back, report)


def synthesize_batch(plan: GradedPlan, denoisers, mask_spec: MaskSpec, bg_spec: BackgroundSpec,
                     h: int, w: int, threshold: float, count: int, seed: int,
                     workers: int = 1):
    """Synthesize ``count`` pairs; pair ``i`` depends only on ``(seed, i)``.

    Results are yielded in index order whatever the worker count.
    """
    jobs = [(plan, denoisers, mask_spec, bg_spec, h, w, threshold, s)
            for s in pair_seeds(seed, count)]
    if workers <= 1 or count <= 1:
        for job in jobs:
            yield synthesize_one(job)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(synthesize_one, jobs, chunksize=max(1, count // (4 * workers)))
