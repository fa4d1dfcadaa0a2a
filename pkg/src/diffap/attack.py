"""PGD + EOT adversary over the purifier-classifier pipeline.

The attacker differentiates its own view of the pipeline (possibly with a
different forward-step count, fewer denoising steps, or guidance removed)
and projects iterates into the norm ball and the [0, 1] box.  Loss is the
cross entropy -log p(y | purify(x)); EOT averages the reparameterized
gradient over stochastic purification replicas with addressable streams.

Gradient backends:

* ANALYTIC_CHAIN: exact reverse-mode sweep through the recorded chain
  using the closed-form score Jacobian; guidance terms (including the
  dependence of the guide target on the attack input) are differentiated.
* FINITE_DIFF: central differences of the replica-averaged loss with
  common random numbers, so the difference isolates the input effect.
* SURROGATE: forward replicas run the full chain, but the backward sweep
  treats guidance as identity (a BPDA-style surrogate-process gradient).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .classifier import ClassifierHead, class_grad, class_log_probs
from .guidance import Distance, GuidanceMethod, GuidanceSpec, distance_hessian_vp
from .purifier import DefenseConfig, purify
from .schedule import NoiseSchedule
from .score import ScoreOracle, score_jacobian

__all__ = [
    "Norm",
    "GradientBackend",
    "AttackConfig",
    "Pipeline",
    "AttackResult",
    "eot_gradient",
    "eot_loss_and_gradient",
    "pgd_attack",
    "asynchronous_attack",
]


class Norm(enum.Enum):
    LINF = "linf"
    L2 = "l2"


class GradientBackend(enum.Enum):
    ANALYTIC_CHAIN = "analytic_chain"
    FINITE_DIFF = "finite_diff"
    SURROGATE = "surrogate"


@dataclass(frozen=True)
class AttackConfig:
    """PGD + EOT configuration.

    epsilon is in [0, 1]-box data units (8/255 for LINF, 0.5 for L2 in the
    reference setting).  epsilon = 0 is the degenerate null attack.
    attacker_forward_steps = None means synchronous (mirror the defender).
    """

    norm: Norm = Norm.LINF
    epsilon: float = 8.0 / 255.0
    iterations: int = 200
    eot_samples: int = 5
    step_size: float | None = None
    attacker_forward_steps: int | None = None
    attacker_denoising_steps: int = 5
    attacker_knows_guidance: bool = True
    gradient_backend: GradientBackend = GradientBackend.ANALYTIC_CHAIN
    seed: int = 0
    fd_step: float = 1e-5

    def __post_init__(self):
        if self.epsilon < 0.0:
            raise ValueError("epsilon must be >= 0")
        if self.iterations < 1 or self.eot_samples < 1:
            raise ValueError("iterations and eot_samples must be >= 1")

    def resolved_step_size(self) -> float:
        if self.step_size is not None:
            return self.step_size
        if self.norm is Norm.LINF:
            return self.epsilon / 4.0
        return self.epsilon * 2.5 / self.iterations


@dataclass(frozen=True)
class Pipeline:
    """The attacked system: score oracle, schedule, and the deployed defense."""

    oracle: ScoreOracle
    schedule: NoiseSchedule
    defense: DefenseConfig

    def attacker_view(self, cfg: AttackConfig) -> DefenseConfig:
        """The surrogate defense the attacker differentiates."""
        forward = cfg.attacker_forward_steps
        if forward is None:
            forward = self.defense.forward_steps
        denoise = min(cfg.attacker_denoising_steps, forward) if forward > 0 else 1
        guidance = self.defense.guidance
        if not cfg.attacker_knows_guidance:
            guidance = GuidanceSpec(
                method=GuidanceMethod.NONE,
                R=guidance.R,
                distance=guidance.distance,
                modulus_k=guidance.modulus_k,
            )
        return replace(
            self.defense,
            forward_steps=forward,
            denoising_steps=denoise,
            guidance=guidance,
        )


@dataclass
class AttackResult:
    x_adv: np.ndarray
    best_loss: np.ndarray
    best_loss_trace: np.ndarray  # (iterations, n) running best EOT loss
    clean_loss: np.ndarray


def _replica_stream(entropy) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy))


def _replica_seeds(cfg: AttackConfig, iteration: int) -> list:
    return [(cfg.seed, iteration, r) for r in range(cfg.eot_samples)]


def _forward_loss(pipeline, head, view, x, y, rng, record):
    out = purify(pipeline.oracle, pipeline.schedule, view, x, rng, record=record)
    x_out, info = out if record else (out, None)
    logp = class_log_probs(head, x_out)
    y_arr = np.asarray(y, dtype=int)
    if y_arr.ndim == 0:
        loss = -logp[..., int(y_arr)]
    else:
        loss = -np.take_along_axis(logp, y_arr[..., None], axis=-1)[..., 0]
    return loss, x_out, info


def _chain_backward(pipeline, view, x_out, info, y, head, x_guide, skip_guidance: bool) -> np.ndarray:
    """Reverse-mode sweep through one recorded replica chain.

    The guide target of every rule is the attack input itself, so guidance
    contributes both a chain factor and a direct path into the gradient.
    """
    schedule = pipeline.schedule
    oracle = pipeline.oracle
    spec = view.guidance
    g = -class_grad(head, x_out, y)
    inside = (info.final_pre_clip > 0.0) & (info.final_pre_clip < 1.0)
    g = np.where(inside, g, 0.0)
    if info.t_star == 0:
        return g
    g_guide = np.zeros_like(g)
    for rec in reversed(info.records):
        ab_t = schedule.alpha_bars[rec.t]
        ab_p = schedule.alpha_bars[rec.t_prev]
        sq_t = np.sqrt(ab_t)
        c_eps = np.sqrt((1.0 - rec.k) * (1.0 - ab_p))

        g_x0_extra = 0.0
        if rec.dps_applied and not skip_guidance:
            amp = 1.0 / sq_t
            hv = distance_hessian_vp(spec.distance, rec.x0_tilde, x_guide, g)
            g_x0_extra = -spec.R * amp * hv
            g_guide += spec.R * amp * hv

        g_x0_used = np.sqrt(ab_p) * g
        g_eps = c_eps * g
        if rec.mediator_applied and not skip_guidance:
            hv = distance_hessian_vp(spec.distance, rec.x0_tilde, x_guide, g_x0_used)
            g_x0 = g_x0_used - spec.R * hv + g_x0_extra
            g_guide += spec.R * hv
        else:
            g_x0 = g_x0_used + g_x0_extra

        g_state = g_x0 / sq_t
        g_eps = g_eps - (np.sqrt(1.0 - ab_t) / sq_t) * g_x0
        J = score_jacobian(oracle, rec.x_state, rec.t)
        g_state = g_state - np.sqrt(1.0 - ab_t) * np.einsum("...de,...e->...d", J, g_eps)

        if rec.gdmp_applied and not skip_guidance:
            hv = distance_hessian_vp(spec.distance, rec.x_pre, rec.gdmp_target, g_state)
            g = g_state - spec.R * hv
            g_guide += sq_t * spec.R * hv
        else:
            g = g_state
    ab_top = schedule.alpha_bars[info.t_star]
    return np.sqrt(ab_top) * g + g_guide


def eot_loss_and_gradient(
    pipeline: Pipeline,
    head: ClassifierHead,
    x: np.ndarray,
    y,
    cfg: AttackConfig,
    replica_seeds: list | None = None,
    rng: np.random.Generator | None = None,
):
    """Replica-averaged loss and gradient at x.  x is (d,) or (n, d)."""
    x = np.asarray(x, dtype=float)
    view = pipeline.attacker_view(cfg)
    backend = cfg.gradient_backend
    if backend is GradientBackend.ANALYTIC_CHAIN and pipeline.oracle.error_spec is not None \
            and pipeline.oracle.error_spec.additive_noise_scale > 0.0:
        raise ValueError("analytic chain gradients need the exact score (no error injection)")
    if replica_seeds is None:
        if rng is None:
            rng = np.random.default_rng(cfg.seed)
        replica_seeds = [tuple(rng.integers(0, 2**63, size=2).tolist()) for _ in range(cfg.eot_samples)]

    if backend is GradientBackend.FINITE_DIFF:
        def avg_loss(xq):
            total = 0.0
            for seed in replica_seeds:
                loss, _, _ = _forward_loss(pipeline, head, view, xq, y, _replica_stream(seed), record=False)
                total = total + loss
            return total / len(replica_seeds)

        loss0 = avg_loss(x)
        grad = np.zeros_like(x)
        h = cfg.fd_step
        for j in range(x.shape[-1]):
            e = np.zeros_like(x)
            e[..., j] = h
            grad[..., j] = (avg_loss(x + e) - avg_loss(x - e)) / (2.0 * h)
        return loss0, grad

    skip_guidance = backend is GradientBackend.SURROGATE
    loss_sum = 0.0
    grad_sum = np.zeros_like(x)
    for seed in replica_seeds:
        loss, x_out, info = _forward_loss(pipeline, head, view, x, y, _replica_stream(seed), record=True)
        grad_sum = grad_sum + _chain_backward(pipeline, view, x_out, info, y, head, x, skip_guidance)
        loss_sum = loss_sum + loss
    n = len(replica_seeds)
    return loss_sum / n, grad_sum / n


def eot_gradient(
    pipeline: Pipeline,
    head: ClassifierHead,
    x: np.ndarray,
    y,
    cfg: AttackConfig,
    rng: np.random.Generator | None = None,
    replica_seeds: list | None = None,
) -> np.ndarray:
    """Mean loss gradient over stochastic purification replicas."""
    _, grad = eot_loss_and_gradient(pipeline, head, x, y, cfg, replica_seeds=replica_seeds, rng=rng)
    return grad


def _project(x: np.ndarray, x0: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    delta = x - x0
    if cfg.norm is Norm.LINF:
        delta = np.clip(delta, -cfg.epsilon, cfg.epsilon)
    else:
        norms = np.linalg.norm(delta, axis=-1, keepdims=True)
        factor = np.minimum(1.0, np.divide(cfg.epsilon, norms, out=np.ones_like(norms), where=norms > 0.0))
        delta = delta * factor
    # Box clipping only shrinks |x - x0| per coordinate, so both balls survive it.
    return np.clip(x0 + delta, 0.0, 1.0)


def pgd_attack(
    pipeline: Pipeline,
    head: ClassifierHead,
    x0: np.ndarray,
    y,
    cfg: AttackConfig,
    return_info: bool = False,
):
    """Projected gradient ascent on the EOT loss; returns the best-loss iterate.

    x0 is a clean (d,) point or an (n, d) batch with y of matching shape.
    """
    x0 = np.asarray(x0, dtype=float)
    single = x0.ndim == 1
    xb = x0[None, :] if single else x0
    yb = np.atleast_1d(np.asarray(y, dtype=int))

    seeds0 = _replica_seeds(cfg, 0)
    clean_loss, _ = eot_loss_and_gradient(pipeline, head, xb, yb, cfg, replica_seeds=seeds0)
    if cfg.epsilon == 0.0:
        result = AttackResult(
            x_adv=x0.copy(),
            best_loss=clean_loss,
            best_loss_trace=np.tile(clean_loss, (1, 1)),
            clean_loss=clean_loss,
        )
        return (x0.copy(), result) if return_info else x0.copy()

    step = cfg.resolved_step_size()
    x = xb.copy()
    best_x = xb.copy()
    best_loss = clean_loss.copy()
    trace = np.empty((cfg.iterations, xb.shape[0]))
    for it in range(cfg.iterations):
        loss, g = eot_loss_and_gradient(pipeline, head, x, yb, cfg, replica_seeds=_replica_seeds(cfg, it))
        improved = loss > best_loss
        best_loss = np.where(improved, loss, best_loss)
        best_x = np.where(improved[:, None], x, best_x)
        trace[it] = best_loss
        if cfg.norm is Norm.LINF:
            x = x + step * np.sign(g)
        else:
            norms = np.linalg.norm(g, axis=-1, keepdims=True)
            x = x + step * np.divide(g, norms, out=np.zeros_like(g), where=norms > 0.0)
        x = _project(x, xb, cfg)
    # Score the final iterate too so the returned point is the argmax seen.
    loss, _ = eot_loss_and_gradient(pipeline, head, x, yb, cfg, replica_seeds=_replica_seeds(cfg, cfg.iterations))
    improved = loss > best_loss
    best_loss = np.where(improved, loss, best_loss)
    best_x = np.where(improved[:, None], x, best_x)

    x_adv = best_x[0] if single else best_x
    if return_info:
        return x_adv, AttackResult(
            x_adv=x_adv, best_loss=best_loss, best_loss_trace=trace, clean_loss=clean_loss
        )
    return x_adv


def asynchronous_attack(
    pipeline: Pipeline,
    head: ClassifierHead,
    x0: np.ndarray,
    y,
    cfg: AttackConfig,
    return_info: bool = False,
):
    """PGD against a surrogate rebuilt with the attacker's own forward steps.

    With attacker_forward_steps equal to the defender's this degenerates to
    the synchronous pgd_attack.
    """
    if cfg.attacker_forward_steps is not None and not (0 <= cfg.attacker_forward_steps <= pipeline.schedule.T):
        raise ValueError("attacker_forward_steps outside [0, T]")
    return pgd_attack(pipeline, head, x0, y, cfg, return_info=return_info)
