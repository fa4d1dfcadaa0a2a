"""Diffusion variance schedule and timestep bookkeeping.

Conventions used throughout the package:

* ``t = 0`` is clean data, ``t = T`` is the end of the trained forward
  process.
* ``betas[t - 1]`` stores ``beta_t`` for ``t = 1..T`` (the usual 1-indexed
  notation).
* ``alpha_bars`` has length ``T + 1`` and is indexed directly by ``t``:
  ``alpha_bars[0] = 1`` and ``alpha_bars[t] = prod_{k<=t} (1 - beta_k)``,
  so step 0 means "no noise".
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "NoiseSchedule",
    "TimestepSubsequence",
    "build_linear_schedule",
    "make_subsequence",
    "ddpm_sigma",
]


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance schedule of the forward noising process.

    Immutable after construction; safe to share across threads.
    """

    T: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("schedule needs at least one step")
        betas = np.asarray(self.betas, dtype=float)
        if betas.shape != (self.T,):
            raise ValueError(f"betas must have shape ({self.T},)")
        if not np.all(np.isfinite(betas)):
            raise ValueError("betas must be finite")
        if np.any(betas <= 0.0) or np.any(betas >= 1.0):
            raise ValueError("betas must lie in (0, 1)")
        # Strictly increasing for any non-constant schedule; the constant
        # case (beta_1 == beta_T) is allowed by build_linear_schedule's
        # precondition.
        if np.any(np.diff(betas) < 0.0):
            raise ValueError("betas must be non-decreasing")
        if self.alphas.shape != (self.T,) or self.alpha_bars.shape != (self.T + 1,):
            raise ValueError("alphas/alpha_bars have inconsistent shapes")
        if self.alpha_bars[0] != 1.0:
            raise ValueError("alpha_bars[0] must be exactly 1")
        if self.alpha_bars[self.T] <= 0.0:
            raise ValueError("alpha_bars[T] must stay positive")
        if np.any(np.diff(self.alpha_bars) >= 0.0):
            raise ValueError("alpha_bars must be strictly decreasing")
        # Recomposition check: alpha_bars[t] = alpha_bars[t-1] * alphas[t].
        recomposed = self.alpha_bars[:-1] * self.alphas
        rel = np.abs(recomposed - self.alpha_bars[1:]) / self.alpha_bars[1:]
        if np.max(rel) > 1e-14:
            raise ValueError("alpha_bars do not recompose from alphas")

    def alpha_bar(self, t: int) -> float:
        """Signal retention abar_t, valid for t in [0, T]."""
        return float(self.alpha_bars[t])


@dataclass(frozen=True)
class TimestepSubsequence:
    """Decreasing grid T_s of denoising steps, ending at 0.

    ``steps[j] = (M - j) * floor(top / M)`` for ``j = 0..M``.  The loop
    index ``i`` of the sampling algorithm relates to positions via
    ``steps[j] = i * floor(top / M)`` with ``i = M - j``.
    """

    M: int
    steps: np.ndarray

    def __post_init__(self):
        steps = np.asarray(self.steps)
        if steps.shape != (self.M + 1,):
            raise ValueError("steps must have M + 1 entries")
        if steps[-1] != 0:
            raise ValueError("subsequence must end at 0")
        if np.any(np.diff(steps) >= 0):
            raise ValueError("subsequence must be strictly decreasing")


def build_linear_schedule(T: int, beta_1: float, beta_T: float) -> NoiseSchedule:
    """Endpoint-inclusive linear beta schedule over t = 1..T.

    The standard choice is beta_1 = 1e-4, beta_T = 0.02 at T = 1000.
    """
    if T < 1:
        raise ValueError("T must be a positive integer")
    if not (np.isfinite(beta_1) and np.isfinite(beta_T)):
        raise ValueError("betas must be finite")
    if not (0.0 < beta_1 <= beta_T < 1.0):
        raise ValueError("need 0 < beta_1 <= beta_T < 1")
    betas = np.linspace(beta_1, beta_T, T)
    alphas = 1.0 - betas
    alpha_bars = np.concatenate(([1.0], np.cumprod(alphas)))
    return NoiseSchedule(T=T, betas=betas, alphas=alphas, alpha_bars=alpha_bars)


def make_subsequence(schedule: NoiseSchedule, M: int, top: int | None = None) -> TimestepSubsequence:
    """Build the denoising grid T_s = [M*(top//M), ..., top//M, 0].

    ``top`` defaults to the schedule's T; purification passes its own
    forward-step count t* <= T.  Integer division: when M does not divide
    ``top`` the first entry is M * floor(top / M) < top.
    """
    if top is None:
        top = schedule.T
    if not (1 <= M <= top <= schedule.T):
        raise ValueError(f"need 1 <= M <= top <= T, got M={M}, top={top}, T={schedule.T}")
    stride = top // M
    steps = np.arange(M, -1, -1, dtype=int) * stride
    return TimestepSubsequence(M=M, steps=steps)


def ddpm_sigma(schedule: NoiseSchedule, t: int, t_prev: int) -> float:
    """DDPM noise coefficient for the transition t -> t_prev.

        sigma = sqrt((1 - abar_{t_prev}) / (1 - abar_t)) * sqrt(1 - abar_t / abar_{t_prev})

    For adjacent steps this is sqrt(beta~_t) of the standard posterior.
    The boundary t=1, t_prev=0 gives 0 because abar_0 = 1.
    """
    if not (0 <= t_prev < t <= schedule.T):
        raise ValueError(f"need 0 <= t_prev < t <= T, got t={t}, t_prev={t_prev}")
    ab_t = schedule.alpha_bars[t]
    ab_p = schedule.alpha_bars[t_prev]
    return float(np.sqrt((1.0 - ab_p) / (1.0 - ab_t)) * np.sqrt(1.0 - ab_t / ab_p))
