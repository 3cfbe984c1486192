"""Graded, background-conditioned diffusion sampling for anomaly image/mask synthesis."""
from ._accel import backend
from .denoiser import (
    AnalyticGaussianDenoiser,
    BranchDenoisers,
    LinearDenoiser,
    loss_dual_branch,
    predict_eps,
    predict_x0,
    train_step,
)
from .ema import (
    EmaConfig,
    PixelErrorField,
    excess_error_bound,
    optimal_weight,
    pixel_error,
    progressive_mask,
    zeta,
)
from .grid import GridError, RngStream, compose, gaussian_field, soft_compose
from .pipeline import (
    AnalyticPriorFactory,
    BackgroundSpec,
    MaskSpec,
    SynthesisReport,
    alignment_metrics,
    generate_background,
    generate_mask,
    synthesize_batch,
    synthesize_pair,
)
from .sampler import (
    GradedPlan,
    anomaly_inference_step,
    background_fidelity,
    ddpm_step,
    graded_sample,
)
from .schedule import (
    DiffusionSchedule,
    PosteriorParams,
    build_linear_schedule,
    forward_background,
    forward_marginal,
    forward_mask,
    posterior_params,
)

__version__ = "0.1.0"

__all__ = [
    "backend",
    "AnalyticGaussianDenoiser",
    "BranchDenoisers",
    "LinearDenoiser",
    "loss_dual_branch",
    "predict_eps",
    "predict_x0",
    "train_step",
    "EmaConfig",
    "PixelErrorField",
    "excess_error_bound",
    "optimal_weight",
    "pixel_error",
    "progressive_mask",
    "zeta",
    "GridError",
    "RngStream",
    "compose",
    "gaussian_field",
    "soft_compose",
    "AnalyticPriorFactory",
    "BackgroundSpec",
    "MaskSpec",
    "SynthesisReport",
    "alignment_metrics",
    "generate_background",
    "generate_mask",
    "synthesize_batch",
    "synthesize_pair",
    "GradedPlan",
    "anomaly_inference_step",
    "background_fidelity",
    "ddpm_step",
    "graded_sample",
    "DiffusionSchedule",
    "PosteriorParams",
    "build_linear_schedule",
    "forward_background",
    "forward_marginal",
    "forward_mask",
    "posterior_params",
]
