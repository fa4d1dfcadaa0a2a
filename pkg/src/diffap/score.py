"""Analytic noise prediction for Gaussian-mixture data.

The forward process applied to a mixture with isotropic components keeps
the marginal a mixture:

    p_t(x) = sum_i w_i N(x; sqrt(abar_t) mu_i, (abar_t sigma_i^2 + 1 - abar_t) I)

so log-density, score, the noise prediction

    eps(x, t) = -sqrt(1 - abar_t) * grad log p_t(x)

and the score Jacobian are all closed form.  This stands in for a trained
epsilon-network; an optional error injection emulates an imperfectly
trained model.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

from .schedule import NoiseSchedule

__all__ = [
    "GaussianMixtureModel",
    "ScoreErrorSpec",
    "ScoreOracle",
    "marginal_log_density",
    "score",
    "epsilon",
    "score_jacobian",
]

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class GaussianMixtureModel:
    """Labeled mixture of isotropic Gaussians confined to [0, 1]^d.

    Serves as data prior, analytic score oracle and Bayes classifier.
    """

    weights: np.ndarray    # (K,) positive, sums to 1
    means: np.ndarray      # (K, d) inside [0, 1]^d
    variances: np.ndarray  # (K,) isotropic per-component variances
    labels: np.ndarray     # (K,) class index per component

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        m = np.asarray(self.means, dtype=float)
        v = np.asarray(self.variances, dtype=float)
        lab = np.asarray(self.labels, dtype=int)
        K = w.shape[0]
        if m.ndim != 2 or m.shape[0] != K or v.shape != (K,) or lab.shape != (K,):
            raise ValueError("inconsistent mixture shapes")
        if np.any(w <= 0.0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")
        if np.any(v <= 0.0):
            raise ValueError("variances must be positive")
        if np.any(m < 0.0) or np.any(m > 1.0):
            raise ValueError("means must lie inside [0, 1]^d")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "variances", v)
        object.__setattr__(self, "labels", lab)

    @property
    def K(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1

    @property
    def mean(self) -> np.ndarray:
        """Mixture mean, sum_i w_i mu_i."""
        return self.weights @ self.means

    @property
    def covariance(self) -> np.ndarray:
        """Mixture covariance, sum_i w_i (v_i I + mu_i mu_i^T) - mu mu^T."""
        mu = self.mean
        second = np.einsum("i,ij,ik->jk", self.weights, self.means, self.means)
        second += np.diag(np.full(self.dim, self.weights @ self.variances))
        return second - np.outer(mu, mu)

    def sample(self, n: int, rng: np.random.Generator):
        """Draw n labeled points; returns (x of shape (n, d), labels (n,))."""
        comp = rng.choice(self.K, size=n, p=self.weights)
        x = self.means[comp] + np.sqrt(self.variances[comp])[:, None] * rng.standard_normal((n, self.dim))
        return x, self.labels[comp]


@dataclass(frozen=True)
class ScoreErrorSpec:
    """Additive Gaussian perturbation of the score, emulating model error.

    The perturbation is a pure function of (seed, t, x): identical inputs
    always receive the identical perturbation, so concurrent evaluation is
    race-free and replays are exact.
    """

    additive_noise_scale: float
    seed: int = 0

    def __post_init__(self):
        if self.additive_noise_scale < 0.0:
            raise ValueError("noise scale must be >= 0")


@dataclass(frozen=True)
class ScoreOracle:
    gmm: GaussianMixtureModel
    schedule: NoiseSchedule
    error_spec: ScoreErrorSpec | None = None


def _check_input(oracle: ScoreOracle, x: np.ndarray, t: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != oracle.gmm.dim:
        raise ValueError(f"x has dimension {x.shape[-1]}, mixture has {oracle.gmm.dim}")
    if not np.all(np.isfinite(x)):
        raise ValueError("x must be finite")
    if not (0 <= t <= oracle.schedule.T):
        raise ValueError(f"t={t} outside [0, {oracle.schedule.T}]")
    return x


def _marginal_params(oracle: ScoreOracle, t: int):
    """Component means/variances of p_t: m_i = sqrt(abar) mu_i, v_i = abar s_i^2 + 1 - abar."""
    ab = oracle.schedule.alpha_bars[t]
    means_t = np.sqrt(ab) * oracle.gmm.means
    vars_t = ab * oracle.gmm.variances + (1.0 - ab)
    return means_t, vars_t


def _component_log_terms(oracle: ScoreOracle, x: np.ndarray, t: int) -> np.ndarray:
    """log(w_i) + log N(x; m_i, v_i I) with shape (..., K)."""
    means_t, vars_t = _marginal_params(oracle, t)
    d = oracle.gmm.dim
    diff = x[..., None, :] - means_t          # (..., K, d)
    sq = np.sum(diff * diff, axis=-1)          # (..., K)
    return (
        np.log(oracle.gmm.weights)
        - 0.5 * d * (_LOG_2PI + np.log(vars_t))
        - 0.5 * sq / vars_t
    )


def marginal_log_density(oracle: ScoreOracle, x: np.ndarray, t: int) -> np.ndarray:
    """log p_t(x), log-sum-exp stabilized.  Supports batched x of shape (..., d)."""
    x = _check_input(oracle, x, t)
    return logsumexp(_component_log_terms(oracle, x, t), axis=-1)


def _error_noise(spec: ScoreErrorSpec, x: np.ndarray, t: int) -> np.ndarray:
    """Content-keyed Gaussian noise: one stream per (seed, t, row of x)."""
    flat = x.reshape(-1, x.shape[-1])
    out = np.empty_like(flat)
    prefix = f"{spec.seed}:{t}:".encode()
    for i, row in enumerate(flat):
        digest = hashlib.blake2b(prefix + row.tobytes(), digest_size=16).digest()
        key = np.frombuffer(digest, dtype=np.uint64)
        gen = np.random.Generator(np.random.Philox(key=key))
        out[i] = gen.standard_normal(x.shape[-1])
    return spec.additive_noise_scale * out.reshape(x.shape)


def score(oracle: ScoreOracle, x: np.ndarray, t: int) -> np.ndarray:
    """grad_x log p_t(x); exact, plus the seeded perturbation when configured."""
    x = _check_input(oracle, x, t)
    means_t, vars_t = _marginal_params(oracle, t)
    log_terms = _component_log_terms(oracle, x, t)
    resp = softmax(log_terms, axis=-1)                       # (..., K)
    grads = (means_t - x[..., None, :]) / vars_t[:, None]    # (..., K, d)
    s = np.einsum("...k,...kd->...d", resp, grads)
    if oracle.error_spec is not None and oracle.error_spec.additive_noise_scale > 0.0:
        s = s + _error_noise(oracle.error_spec, x, t)
    return s


def epsilon(oracle: ScoreOracle, x: np.ndarray, t: int) -> np.ndarray:
    """Noise prediction eps(x, t) = -sqrt(1 - abar_t) * score(x, t).  Needs t >= 1."""
    if t < 1:
        raise ValueError("eps is undefined at t = 0 (no noise to predict)")
    ab = oracle.schedule.alpha_bars[t]
    return -np.sqrt(1.0 - ab) * score(oracle, x, t)


def score_jacobian(oracle: ScoreOracle, x: np.ndarray, t: int) -> np.ndarray:
    """d(score)/dx in closed form from mixture responsibilities.

    With g_i = (m_i - x)/v_i and s = sum_i r_i g_i:

        J = -sum_i (r_i / v_i) I + sum_i r_i g_i g_i^T - s s^T

    Symmetric (Hessian of log p_t).  Rejected under error injection, where
    no Jacobian is defined.
    """
    if oracle.error_spec is not None and oracle.error_spec.additive_noise_scale > 0.0:
        raise ValueError("score Jacobian is only defined for the exact score")
    x = _check_input(oracle, x, t)
    means_t, vars_t = _marginal_params(oracle, t)
    log_terms = _component_log_terms(oracle, x, t)
    resp = softmax(log_terms, axis=-1)
    grads = (means_t - x[..., None, :]) / vars_t[:, None]
    s = np.einsum("...k,...kd->...d", resp, grads)
    d = oracle.gmm.dim
    eye = np.eye(d)
    diag = np.einsum("...k,k->...", resp, 1.0 / vars_t)
    J = np.einsum("...k,...kd,...ke->...de", resp, grads, grads)
    J -= np.einsum("...d,...e->...de", s, s)
    J -= diag[..., None, None] * eye
    return J
