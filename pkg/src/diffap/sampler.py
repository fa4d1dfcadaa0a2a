"""Forward noising and the generalized reverse-sampling family.

One reverse transition t -> t_prev is parameterized by the fresh-noise
rate k in [0, 1]:

    x_tilde0 = (x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t)
    x_prev   = sqrt(abar_prev) x_tilde0
             + sqrt(1 - k) sqrt(1 - abar_prev) eps_hat
             + sqrt(k)     sqrt(1 - abar_prev) z

k = 0 is the deterministic DDIM step, k = 1 is random sampling (the step
re-noises fully at the destination level and forgets the previous sample
position), and the DDPM posterior step corresponds to
k = ddpm_sigma(t, t_prev)^2 / (1 - abar_prev).  The sigma-parameterized
form

    x_prev = sqrt(abar_prev) x_tilde0 + sqrt(1 - abar_prev - sigma^2) eps_hat + sigma z

is the same family under sigma^2 = k (1 - abar_prev).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .schedule import NoiseSchedule, TimestepSubsequence, ddpm_sigma
from .score import ScoreOracle, epsilon

__all__ = [
    "SamplerKind",
    "SamplerSpec",
    "Trajectory",
    "forward_noise",
    "generalized_step",
    "step_from_parts",
    "sigma_step",
    "run_reverse",
    "trajectory_dispersion",
]


class SamplerKind(enum.Enum):
    DDIM = "ddim"
    DDPM = "ddpm"
    RANDOM = "random"
    CUSTOM = "custom"


@dataclass(frozen=True)
class SamplerSpec:
    """Selects a member of the sampling family via its fresh-noise rate.

    DDIM is k = 0, RANDOM is k = 1, DDPM resolves k per transition from
    ddpm_sigma, CUSTOM takes a constant or a per-step-index table/callable.
    """

    kind: SamplerKind
    k: float | None = None
    k_schedule: Callable[[int], float] | dict | None = None

    def __post_init__(self):
        if self.kind is SamplerKind.CUSTOM:
            if self.k is None and self.k_schedule is None:
                raise ValueError("CUSTOM sampler needs k or k_schedule")
            if self.k is not None and not (0.0 <= self.k <= 1.0):
                raise ValueError("k must lie in [0, 1]")

    @classmethod
    def ddim(cls) -> "SamplerSpec":
        return cls(SamplerKind.DDIM)

    @classmethod
    def ddpm(cls) -> "SamplerSpec":
        return cls(SamplerKind.DDPM)

    @classmethod
    def random(cls) -> "SamplerSpec":
        return cls(SamplerKind.RANDOM)

    @classmethod
    def custom(cls, k: float) -> "SamplerSpec":
        return cls(SamplerKind.CUSTOM, k=float(k))

    def k_for(self, schedule: NoiseSchedule, t: int, t_prev: int, step_index: int | None = None) -> float:
        """Fresh-noise rate for the transition t -> t_prev."""
        if self.kind is SamplerKind.DDIM:
            return 0.0
        if self.kind is SamplerKind.RANDOM:
            return 1.0
        if self.kind is SamplerKind.DDPM:
            ab_p = schedule.alpha_bars[t_prev]
            if t_prev == 0:
                # 1 - abar_0 = 0: the noise coefficient vanishes whatever k is.
                return 0.0
            sig = ddpm_sigma(schedule, t, t_prev)
            return min(1.0, sig * sig / (1.0 - ab_p))
        if self.k_schedule is not None:
            if callable(self.k_schedule):
                k = float(self.k_schedule(step_index if step_index is not None else t))
            else:
                k = float(self.k_schedule[step_index if step_index is not None else t])
        else:
            k = float(self.k)
        if not (0.0 <= k <= 1.0):
            raise ValueError(f"custom k={k} outside [0, 1]")
        return k

    def label(self) -> str:
        if self.kind is SamplerKind.CUSTOM and self.k is not None:
            return f"k={self.k:g}"
        return self.kind.value


@dataclass
class Trajectory:
    """Per-step (t, x_t, x_tilde0) triples recorded during reverse sampling."""

    steps: list = field(default_factory=list)

    def append(self, t: int, x_t: np.ndarray, x0_tilde: np.ndarray):
        self.steps.append((int(t), np.array(x_t, copy=True), np.array(x0_tilde, copy=True)))

    @property
    def ts(self) -> np.ndarray:
        return np.array([s[0] for s in self.steps])

    @property
    def states(self) -> np.ndarray:
        return np.stack([s[1] for s in self.steps])


def forward_noise(schedule: NoiseSchedule, x0: np.ndarray, t: int, eps: np.ndarray) -> np.ndarray:
    """One-shot forward noising x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
    x0 = np.asarray(x0, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if x0.shape != eps.shape:
        raise ValueError(f"x0 and eps shapes differ: {x0.shape} vs {eps.shape}")
    if not (0 <= t <= schedule.T):
        raise ValueError(f"t={t} outside [0, {schedule.T}]")
    ab = schedule.alpha_bars[t]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def posterior_mean_x0(schedule: NoiseSchedule, x_t: np.ndarray, t: int, eps_hat: np.ndarray) -> np.ndarray:
    """Invert the forward map with a noise estimate: (x_t - sqrt(1-abar) eps_hat)/sqrt(abar)."""
    ab = schedule.alpha_bars[t]
    return (x_t - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)


def step_from_parts(
    schedule: NoiseSchedule,
    x0_tilde: np.ndarray,
    eps_hat: np.ndarray,
    t_prev: int,
    k: float,
    z: np.ndarray,
) -> np.ndarray:
    """The family step given an (already possibly guided) mediator."""
    ab_p = schedule.alpha_bars[t_prev]
    one_minus = 1.0 - ab_p
    return (
        np.sqrt(ab_p) * x0_tilde
        + np.sqrt((1.0 - k) * one_minus) * eps_hat
        + np.sqrt(k * one_minus) * z
    )


def generalized_step(
    schedule: NoiseSchedule,
    x_t: np.ndarray,
    t: int,
    t_prev: int,
    eps_hat: np.ndarray,
    k: float,
    z: np.ndarray,
) -> np.ndarray:
    """One reverse transition with fresh-noise rate k (k-parameterized family)."""
    if not (0 <= t_prev < t <= schedule.T):
        raise ValueError(f"need 0 <= t_prev < t <= T, got t={t}, t_prev={t_prev}")
    if not (0.0 <= k <= 1.0):
        raise ValueError(f"k={k} outside [0, 1]")
    x_t = np.asarray(x_t, dtype=float)
    x0_tilde = posterior_mean_x0(schedule, x_t, t, eps_hat)
    return step_from_parts(schedule, x0_tilde, eps_hat, t_prev, k, z)


def sigma_step(
    schedule: NoiseSchedule,
    x_t: np.ndarray,
    t: int,
    t_prev: int,
    eps_hat: np.ndarray,
    sigma: float,
    z: np.ndarray,
) -> np.ndarray:
    """The sigma-parameterized form of the same family.

    Requires sigma^2 <= 1 - abar_{t_prev} so the direction coefficient
    sqrt(1 - abar_prev - sigma^2) stays real.
    """
    if not (0 <= t_prev < t <= schedule.T):
        raise ValueError(f"need 0 <= t_prev < t <= T, got t={t}, t_prev={t_prev}")
    ab_p = schedule.alpha_bars[t_prev]
    if sigma < 0.0 or sigma * sigma > (1.0 - ab_p):
        raise ValueError(f"sigma^2={sigma * sigma} exceeds 1 - abar_prev={1.0 - ab_p}")
    x_t = np.asarray(x_t, dtype=float)
    x0_tilde = posterior_mean_x0(schedule, x_t, t, eps_hat)
    return (
        np.sqrt(ab_p) * x0_tilde
        + np.sqrt(1.0 - ab_p - sigma * sigma) * eps_hat
        + sigma * z
    )


def run_reverse(
    oracle: ScoreOracle,
    schedule: NoiseSchedule,
    subseq: TimestepSubsequence,
    spec: SamplerSpec,
    x_start: np.ndarray,
    rng: np.random.Generator,
    record: bool = True,
):
    """Unguided reverse chain across the subsequence grid.

    ``x_start`` is the state at ``subseq.steps[0]``.  Noise z is drawn at
    every transition regardless of k so that matched seeds stay aligned
    across sampler kinds.  Returns (x0, Trajectory or None).
    """
    x = np.asarray(x_start, dtype=float)
    traj = Trajectory() if record else None
    steps = subseq.steps
    for j in range(subseq.M):
        t, t_prev = int(steps[j]), int(steps[j + 1])
        eps_hat = epsilon(oracle, x, t)
        x0_tilde = posterior_mean_x0(schedule, x, t, eps_hat)
        if record:
            traj.append(t, x, x0_tilde)
        k = spec.k_for(schedule, t, t_prev, step_index=subseq.M - j)
        z = rng.standard_normal(x.shape)
        x = step_from_parts(schedule, x0_tilde, eps_hat, t_prev, k, z)
    if record:
        traj.append(0, x, x)
    return x, traj


def trajectory_dispersion(trajectories: list[Trajectory]) -> tuple[np.ndarray, np.ndarray]:
    """Across-run standard deviation of x_t at matched t.

    Quantifies how spread out sampling trajectories are: per step, the RMS
    over coordinates of the across-run standard deviation.  Requires >= 2
    trajectories on identical step grids.
    """
    if len(trajectories) < 2:
        raise ValueError("need at least two trajectories")
    ts = trajectories[0].ts
    for traj in trajectories[1:]:
        if not np.array_equal(traj.ts, ts):
            raise ValueError("trajectories recorded on different step grids")
    states = np.stack([traj.states for traj in trajectories])  # (runs, steps, ...)
    std = np.std(states, axis=0)
    dispersion = np.sqrt(np.mean(std * std, axis=tuple(range(1, std.ndim))))
    return ts, dispersion
