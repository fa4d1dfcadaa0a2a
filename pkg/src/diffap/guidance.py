"""Guidance rules for conditioned purification, plus bias diagnostics.

Three competing rules are implemented against one interface:

* mediator: gradient descent on a distance to the guide applied to the
  denoised estimate x_tilde0 before re-noising,
      x_tilde0 <- x_tilde0 - R * grad d(x_tilde0, x_guide).
* gdmp: gradient applied to the noisy state toward a freshly noised copy
  of the guide, x_t <- x_t - R * grad d(x_t, sqrt(abar) x_guide + sqrt(1-abar) z2).
  The fresh z2 differs from the noise implied by the state, which
  introduces a sqrt(1-abar_t) (z1 - z2) gradient bias that grows with t.
* dps: the time-t mediator gradient applied to the time-(t-1) state; the
  chain rule through x_tilde0 carries a 1/sqrt(abar_t) amplification that
  blows up at large t.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import numpy as np

from .schedule import NoiseSchedule
from .sampler import forward_noise, posterior_mean_x0
from .score import ScoreOracle, epsilon

__all__ = [
    "GuidanceMethod",
    "Distance",
    "GuidanceSpec",
    "GuidanceDiagnostics",
    "posterior_x0",
    "distance_gradient",
    "distance_hessian_vp",
    "mediator_guide",
    "gdmp_guide",
    "dps_guide",
    "gdmp_bias_estimate",
    "should_guide",
    "guidance_call_counter",
]


class GuidanceMethod(enum.Enum):
    NONE = "none"
    MEDIATOR = "mediator"
    GDMP = "gdmp"
    DPS = "dps"


class Distance(enum.Enum):
    MSE = "mse"
    L1 = "l1"
    L2 = "l2"


@dataclass(frozen=True)
class GuidanceSpec:
    """Guidance rule, guided factor R, distance metric and modulus k.

    Guidance fires at loop indices i with i mod modulus_k == 0;
    modulus_k = 1 guides every step.
    """

    method: GuidanceMethod = GuidanceMethod.NONE
    R: float = 1.0
    distance: Distance = Distance.MSE
    modulus_k: int = 2

    def __post_init__(self):
        if self.R <= 0.0:
            raise ValueError("guided factor R must be positive")
        if self.modulus_k < 1:
            raise ValueError("modulus_k must be >= 1")


@dataclass
class GuidanceDiagnostics:
    """Per-guided-step records of (t, guidance vector, bias magnitude estimate)."""

    ts: list
    vectors: list
    bias: list

    def __init__(self):
        self.ts = []
        self.vectors = []
        self.bias = []

    def record(self, t: int, vector: np.ndarray, bias: float | None = None):
        self.ts.append(int(t))
        self.vectors.append(np.array(vector, copy=True))
        self.bias.append(bias)


class _CallCounter:
    """Counts guidance evaluations; used to verify the attack graph never

    touches the defender's guidance in the attacker-blind setting."""

    def __init__(self):
        self.count = 0

    def reset(self):
        self.count = 0

    def bump(self):
        self.count += 1


guidance_call_counter = _CallCounter()


def posterior_x0(schedule: NoiseSchedule, x_t: np.ndarray, t: int, eps_hat: np.ndarray) -> np.ndarray:
    """The mediator variable x_tilde0 = (x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t)."""
    if t < 1:
        raise ValueError("posterior mean needs t >= 1")
    return posterior_mean_x0(schedule, np.asarray(x_t, dtype=float), t, eps_hat)


def distance_gradient(distance: Distance, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """grad_a d(a, b) for the supported distances.

    MSE -> 2 (a - b) / d, L2 -> (a - b)/||a - b|| (zero subgradient at
    a = b), L1 -> sign(a - b).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[-1] != b.shape[-1]:
        raise ValueError("dimension mismatch")
    diff = a - b
    if distance is Distance.MSE:
        return 2.0 * diff / a.shape[-1]
    if distance is Distance.L1:
        return np.sign(diff)
    norm = np.linalg.norm(diff, axis=-1, keepdims=True)
    return np.divide(diff, norm, out=np.zeros_like(diff), where=norm > 0.0)


def distance_hessian_vp(distance: Distance, a: np.ndarray, b: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Hessian-vector product H_d(a, b) @ v, used by the analytic attack chain."""
    if distance is Distance.MSE:
        return 2.0 * v / a.shape[-1]
    if distance is Distance.L1:
        return np.zeros_like(v)
    diff = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    norm = np.linalg.norm(diff, axis=-1, keepdims=True)
    safe = np.where(norm > 0.0, norm, 1.0)
    u = diff / safe
    proj = np.sum(u * v, axis=-1, keepdims=True)
    out = (v - u * proj) / safe
    return np.where(norm > 0.0, out, 0.0)


def mediator_guide(x0_tilde: np.ndarray, x_guide: np.ndarray, spec: GuidanceSpec, t: int) -> np.ndarray:
    """Pull the mediator toward the guide: x_tilde0 - R * grad d(x_tilde0, x_guide)."""
    guidance_call_counter.bump()
    grad = distance_gradient(spec.distance, x0_tilde, x_guide)
    return x0_tilde - spec.R * grad


def gdmp_guide(
    schedule: NoiseSchedule,
    x_t: np.ndarray,
    x_guide: np.ndarray,
    t: int,
    spec: GuidanceSpec,
    rng: np.random.Generator,
    z2: np.ndarray | None = None,
):
    """Guide the noisy state toward a freshly noised copy of the guide.

    Returns (guided x_t, the noised guide target).  z2 is drawn from the
    provided stream unless supplied explicitly (tests fix it).
    """
    guidance_call_counter.bump()
    x_t = np.asarray(x_t, dtype=float)
    if z2 is None:
        z2 = rng.standard_normal(x_t.shape)
    target = forward_noise(schedule, np.asarray(x_guide, dtype=float), t, z2)
    grad = distance_gradient(spec.distance, x_t, target)
    return x_t - spec.R * grad, target


def dps_guide(
    schedule: NoiseSchedule,
    x_prev: np.ndarray,
    x0_tilde_t: np.ndarray,
    x_guide: np.ndarray,
    t: int,
    spec: GuidanceSpec,
) -> np.ndarray:
    """Apply the time-t mediator gradient to x_{t-1} with 1/sqrt(abar_t) gain.

    The amplification is deliberately unclamped; its blow-up at large t is
    the behavior under study.
    """
    guidance_call_counter.bump()
    ab_t = schedule.alpha_bars[t]
    if ab_t < 1e-12:
        warnings.warn(f"DPS amplification 1/sqrt(abar_{t}) exceeds 1e6; expect blow-up", RuntimeWarning)
    amp = 1.0 / np.sqrt(ab_t)
    grad = distance_gradient(spec.distance, x0_tilde_t, x_guide)
    return np.asarray(x_prev, dtype=float) - spec.R * amp * grad


def gdmp_bias_estimate(
    schedule: NoiseSchedule,
    t: int,
    n_samples: int,
    d: int = 8,
    R: float = 1.0,
    rng: np.random.Generator | None = None,
    oracle: ScoreOracle | None = None,
    z2: np.ndarray | None = None,
) -> float:
    """Monte-Carlo RMS norm of the GDMP gradient-bias term (2R/d) sqrt(1-abar_t) (z1 - z2).

    With an oracle, z1 is recovered as eps_hat at a forward-noised mixture
    draw (the exact-score context); otherwise z1 ~ N(0, I) reproduces the
    idealized decomposition.  The closed form for independent standard
    normals is 2R sqrt(2 (1 - abar_t)) / sqrt(d).
    """
    if n_samples < 100:
        raise ValueError("need n_samples >= 100")
    if rng is None:
        rng = np.random.default_rng(0)
    if oracle is not None:
        d = oracle.gmm.dim
        x0, _ = oracle.gmm.sample(n_samples, rng)
        eps = rng.standard_normal((n_samples, d))
        x_t = forward_noise(schedule, x0, t, eps)
        z1 = epsilon(oracle, x_t, t)
    else:
        z1 = rng.standard_normal((n_samples, d))
    if z2 is None:
        z2 = rng.standard_normal((n_samples, d))
    ab = schedule.alpha_bars[t]
    bias = (2.0 * R / d) * np.sqrt(1.0 - ab) * (z1 - z2)
    return float(np.sqrt(np.mean(np.sum(bias * bias, axis=-1))))


def should_guide(i: int, modulus_k: int) -> bool:
    """Algorithm loop-index test: guide when i mod k == 0."""
    if i < 1:
        raise ValueError("step index starts at 1")
    return i % modulus_k == 0
