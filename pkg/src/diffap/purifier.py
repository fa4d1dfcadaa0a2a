"""End-to-end purification chain.

The pipeline forward-noises the input to t* in one shot, then runs the
guided reverse chain on the grid T_s built over t*:

    for i = M..1 (t = T_s(i), t_prev = T_s(i-1)):
        [gdmp]      x_t <- guided toward a freshly noised copy of the input
        eps_hat  = eps(x_t, t)
        x_tilde0 = (x_t - sqrt(1-abar_t) eps_hat) / sqrt(abar_t)
        [mediator]  x_tilde0 <- pulled toward the input when i mod k == 0
        x_prev   = sqrt(abar_prev) x_tilde0 + sqrt(1-k_t) sqrt(1-abar_prev) eps_hat
                 + sqrt(k_t) sqrt(1-abar_prev) z
        [dps]       x_prev <- kicked by the time-t mediator gradient

The k = 1 sampler makes the re-noising line exactly the fresh-noise form;
other sampler kinds substitute their step rule while guidance stays on
the mediator.  The final transition lands on t = 0 where abar_0 = 1, so
no noise is injected after the last mediator estimate.  Output is clipped
to [0, 1]^d only at the very end.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .guidance import (
    GuidanceDiagnostics,
    GuidanceMethod,
    GuidanceSpec,
    dps_guide,
    gdmp_guide,
    mediator_guide,
    posterior_x0,
    should_guide,
)
from .sampler import SamplerSpec, forward_noise, step_from_parts
from .schedule import NoiseSchedule, make_subsequence
from .score import ScoreOracle, epsilon

__all__ = ["DefenseConfig", "PurifyInfo", "StepRecord", "purify", "purify_batch", "sample_stream"]


@dataclass(frozen=True)
class DefenseConfig:
    """Forward steps t*, denoising steps M, sampler and guidance choice.

    The chain's top step is t* (the schedule's T stays fixed); the grid
    divides t*.  forward_steps = 0 is the degenerate identity purifier.
    """

    forward_steps: int
    denoising_steps: int
    sampler: SamplerSpec
    guidance: GuidanceSpec
    seed: int = 0

    def __post_init__(self):
        if self.forward_steps < 0:
            raise ValueError("forward_steps must be >= 0")
        if self.forward_steps > 0 and not (1 <= self.denoising_steps <= self.forward_steps):
            raise ValueError("need 1 <= denoising_steps <= forward_steps")

    def with_sampler(self, sampler: SamplerSpec) -> "DefenseConfig":
        return replace(self, sampler=sampler)

    def with_guidance(self, guidance: GuidanceSpec) -> "DefenseConfig":
        return replace(self, guidance=guidance)


@dataclass
class StepRecord:
    """Everything the analytic attack gradient needs to replay one step."""

    i: int
    t: int
    t_prev: int
    k: float
    x_pre: np.ndarray          # state before any GDMP guidance
    x_state: np.ndarray        # state eps_hat was evaluated at
    eps_hat: np.ndarray
    x0_tilde: np.ndarray       # mediator before mediator guidance
    gdmp_target: np.ndarray | None = None
    mediator_applied: bool = False
    gdmp_applied: bool = False
    dps_applied: bool = False


@dataclass
class PurifyInfo:
    t_star: int
    guided_steps: int = 0
    records: list = field(default_factory=list)
    final_pre_clip: np.ndarray | None = None
    diagnostics: GuidanceDiagnostics | None = None


def _draw(rng, shape) -> np.ndarray:
    """Standard normal draw from one Generator or a per-sample Generator list."""
    if isinstance(rng, (list, tuple)):
        if len(shape) != 2 or len(rng) != shape[0]:
            raise ValueError("per-sample streams need a (n, d) batch with n generators")
        return np.stack([g.standard_normal(shape[1]) for g in rng])
    return rng.standard_normal(shape)


def purify(
    oracle: ScoreOracle,
    schedule: NoiseSchedule,
    cfg: DefenseConfig,
    x_input: np.ndarray,
    rng,
    record: bool = False,
    collect_diagnostics: bool = False,
):
    """Run the guided chain; returns purified x0, or (x0, PurifyInfo) when record=True.

    ``x_input`` may be a single (d,) point or an (n, d) batch; ``rng`` is a
    numpy Generator, or a list of n per-sample Generators for stream-exact
    batching.  Deterministic given inputs and stream states.
    """
    x_input = np.asarray(x_input, dtype=float)
    if x_input.shape[-1] != oracle.gmm.dim:
        raise ValueError("input dimension does not match the mixture")
    t_star = cfg.forward_steps
    if t_star > schedule.T:
        raise ValueError("forward_steps exceeds the schedule length")
    info = PurifyInfo(t_star=t_star)
    if collect_diagnostics:
        info.diagnostics = GuidanceDiagnostics()
    if t_star == 0:
        out = np.clip(x_input, 0.0, 1.0)
        if record:
            info.final_pre_clip = x_input
            return out, info
        return out

    subseq = make_subsequence(schedule, cfg.denoising_steps, top=t_star)
    spec = cfg.guidance
    x = forward_noise(schedule, x_input, t_star, _draw(rng, x_input.shape))

    for j in range(subseq.M):
        i = subseq.M - j
        t, t_prev = int(subseq.steps[j]), int(subseq.steps[j + 1])
        guide_now = spec.method is not GuidanceMethod.NONE and should_guide(i, spec.modulus_k)

        x_pre = x
        gdmp_target = None
        if guide_now and spec.method is GuidanceMethod.GDMP:
            x, gdmp_target = gdmp_guide(schedule, x, x_input, t, spec, None, z2=_draw(rng, x.shape))
            if info.diagnostics is not None:
                info.diagnostics.record(t, x - x_pre)
        eps_hat = epsilon(oracle, x, t)
        x0_tilde = posterior_x0(schedule, x, t, eps_hat)
        x0_used = x0_tilde
        if guide_now and spec.method is GuidanceMethod.MEDIATOR:
            x0_used = mediator_guide(x0_tilde, x_input, spec, t)
            if info.diagnostics is not None:
                info.diagnostics.record(t, x0_used - x0_tilde)
        k = cfg.sampler.k_for(schedule, t, t_prev, step_index=i)
        z = _draw(rng, x.shape)
        x_next = step_from_parts(schedule, x0_used, eps_hat, t_prev, k, z)
        if guide_now and spec.method is GuidanceMethod.DPS:
            kicked = dps_guide(schedule, x_next, x0_tilde, x_input, t, spec)
            if info.diagnostics is not None:
                info.diagnostics.record(t, kicked - x_next)
            x_next = kicked

        if guide_now:
            info.guided_steps += 1
        if record:
            info.records.append(
                StepRecord(
                    i=i, t=t, t_prev=t_prev, k=k,
                    x_pre=x_pre, x_state=x, eps_hat=eps_hat, x0_tilde=x0_tilde,
                    gdmp_target=gdmp_target,
                    mediator_applied=guide_now and spec.method is GuidanceMethod.MEDIATOR,
                    gdmp_applied=guide_now and spec.method is GuidanceMethod.GDMP,
                    dps_applied=guide_now and spec.method is GuidanceMethod.DPS,
                )
            )
        x = x_next

    out = np.clip(x, 0.0, 1.0)
    if record:
        info.final_pre_clip = x
        return out, info
    return out


def sample_stream(base_seed: int, index: int, replica: int | None = None) -> np.random.Generator:
    """Derive the per-sample (optionally per-replica) defense stream."""
    entropy = (base_seed, index) if replica is None else (base_seed, index, replica)
    return np.random.default_rng(np.random.SeedSequence(entropy))


def purify_batch(
    oracle: ScoreOracle,
    schedule: NoiseSchedule,
    cfg: DefenseConfig,
    inputs: np.ndarray,
    base_seed: int | None = None,
    indices: np.ndarray | None = None,
) -> np.ndarray:
    """Purify a batch with per-sample streams hashed from (base_seed, index).

    Results are order-independent: element i is purified with the stream
    derived from its index, so permuting (inputs, indices) permutes the
    outputs.  ``indices`` defaults to 0..n-1.
    """
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim != 2 or inputs.shape[0] == 0:
        raise ValueError("inputs must be a non-empty (n, d) batch")
    if base_seed is None:
        base_seed = cfg.seed
    if indices is None:
        indices = np.arange(inputs.shape[0])
    gens = [sample_stream(base_seed, int(ix)) for ix in indices]
    return purify(oracle, schedule, cfg, inputs, gens)
