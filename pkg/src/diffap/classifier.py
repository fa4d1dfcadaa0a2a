"""Differentiable Bayes classifier of the labeled mixture.

Stands in for a trained network: exact posteriors, exact gradients, zero
training nondeterminism.  The attack differentiates log p(y | x) through
this head.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

from .score import GaussianMixtureModel

__all__ = ["ClassifierHead", "class_log_probs", "class_grad", "accuracy"]

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class ClassifierHead:
    gmm: GaussianMixtureModel
    temperature: float = 1.0

    def __post_init__(self):
        if self.temperature <= 0.0:
            raise ValueError("temperature must be positive")
        counts = np.bincount(self.gmm.labels, minlength=self.gmm.n_classes)
        if np.any(counts == 0):
            raise ValueError("every class needs at least one component")

    @property
    def C(self) -> int:
        return self.gmm.n_classes


def _class_scores(head: ClassifierHead, x: np.ndarray):
    """Per-class log joint u_c(x) = logsumexp_{i: label=i} log w_i N(x; mu_i, s_i^2 I)."""
    gmm = head.gmm
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != gmm.dim:
        raise ValueError("dimension mismatch")
    if not np.all(np.isfinite(x)):
        raise ValueError("x must be finite")
    diff = x[..., None, :] - gmm.means                      # (..., K, d)
    sq = np.sum(diff * diff, axis=-1)
    log_comp = (
        np.log(gmm.weights)
        - 0.5 * gmm.dim * (_LOG_2PI + np.log(gmm.variances))
        - 0.5 * sq / gmm.variances
    )
    u = np.full(x.shape[:-1] + (head.C,), -np.inf)
    for c in range(head.C):
        mask = gmm.labels == c
        u[..., c] = logsumexp(log_comp[..., mask], axis=-1)
    return u, log_comp


def class_log_probs(head: ClassifierHead, x: np.ndarray) -> np.ndarray:
    """Tempered log p(y | x), normalized so logsumexp over classes is 0."""
    u, _ = _class_scores(head, x)
    logits = u / head.temperature
    return logits - logsumexp(logits, axis=-1, keepdims=True)


def class_grad(head: ClassifierHead, x: np.ndarray, y) -> np.ndarray:
    """grad_x log p(y | x), closed form via within-class responsibilities.

    y may be a scalar class or an array matching x's batch shape.
    """
    gmm = head.gmm
    x = np.asarray(x, dtype=float)
    u, log_comp = _class_scores(head, x)
    probs = softmax(u / head.temperature, axis=-1)          # (..., C)
    comp_grads = (gmm.means - x[..., None, :]) / gmm.variances[:, None]  # (..., K, d)
    # grad u_c = sum_{i in c} r_i^{(c)} comp_grad_i with responsibilities within class c.
    grad_u = np.zeros(x.shape[:-1] + (head.C, gmm.dim))
    for c in range(head.C):
        mask = gmm.labels == c
        r = softmax(log_comp[..., mask], axis=-1)
        grad_u[..., c, :] = np.einsum("...k,...kd->...d", r, comp_grads[..., mask, :])
    y = np.asarray(y, dtype=int)
    if y.ndim == 0:
        grad_y = grad_u[..., int(y), :]
    else:
        grad_y = np.take_along_axis(grad_u, y[..., None, None], axis=-2)[..., 0, :]
    mean_grad = np.einsum("...c,...cd->...d", probs, grad_u)
    return (grad_y - mean_grad) / head.temperature


def accuracy(head: ClassifierHead, inputs: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of argmax matches over a non-empty batch."""
    inputs = np.asarray(inputs, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if inputs.ndim != 2 or inputs.shape[0] == 0:
        raise ValueError("inputs must be a non-empty (n, d) batch")
    if labels.shape != (inputs.shape[0],):
        raise ValueError("labels length must match inputs")
    preds = np.argmax(class_log_probs(head, inputs), axis=-1)
    return float(np.mean(preds == labels))
