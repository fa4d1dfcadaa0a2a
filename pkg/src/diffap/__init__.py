"""Desk-scale diffusion purification lab over analytic Gaussian mixtures.

Everything a trained diffusion stack would provide is replaced by closed
forms (mixture score oracle, Bayes classifier), so the sampling family,
the guidance rules and the PGD+EOT evaluation protocol are executable and
checkable end to end on one machine.
"""

from .schedule import (
    NoiseSchedule,
    TimestepSubsequence,
    build_linear_schedule,
    ddpm_sigma,
    make_subsequence,
)
from .score import (
    GaussianMixtureModel,
    ScoreErrorSpec,
    ScoreOracle,
    epsilon,
    marginal_log_density,
    score,
    score_jacobian,
)
from .sampler import (
    SamplerKind,
    SamplerSpec,
    Trajectory,
    forward_noise,
    generalized_step,
    run_reverse,
    sigma_step,
    trajectory_dispersion,
)
from .guidance import (
    Distance,
    GuidanceMethod,
    GuidanceSpec,
    distance_gradient,
    dps_guide,
    gdmp_bias_estimate,
    gdmp_guide,
    mediator_guide,
    posterior_x0,
    should_guide,
)
from .classifier import ClassifierHead, accuracy, class_grad, class_log_probs
from .purifier import DefenseConfig, purify, purify_batch
from .attack import (
    AttackConfig,
    GradientBackend,
    Norm,
    Pipeline,
    asynchronous_attack,
    eot_gradient,
    pgd_attack,
)
from .harness import (
    ExperimentReport,
    Lab,
    emit_report,
    evaluate,
    sweep_forward_steps,
    sweep_guidance_methods,
    sweep_noise_rate,
)
from . import config

__all__ = [
    "NoiseSchedule", "TimestepSubsequence", "build_linear_schedule", "ddpm_sigma", "make_subsequence",
    "GaussianMixtureModel", "ScoreErrorSpec", "ScoreOracle", "epsilon", "marginal_log_density",
    "score", "score_jacobian",
    "SamplerKind", "SamplerSpec", "Trajectory", "forward_noise", "generalized_step",
    "run_reverse", "sigma_step", "trajectory_dispersion",
    "Distance", "GuidanceMethod", "GuidanceSpec", "distance_gradient", "dps_guide",
    "gdmp_bias_estimate", "gdmp_guide", "mediator_guide", "posterior_x0", "should_guide",
    "ClassifierHead", "accuracy", "class_grad", "class_log_probs",
    "DefenseConfig", "purify", "purify_batch",
    "AttackConfig", "GradientBackend", "Norm", "Pipeline", "asynchronous_attack",
    "eot_gradient", "pgd_attack",
    "ExperimentReport", "Lab", "emit_report", "evaluate", "sweep_forward_steps",
    "sweep_guidance_methods", "sweep_noise_rate",
    "config",
]
