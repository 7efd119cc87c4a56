"""Multiclass focal loss with analytic gradient and hessian through softmax.

Per sample with true class y, probabilities p = softmax(margins), u = 1 - p_y:

    loss = -w_y * u**gamma * log(p_y)

Let A(s) = d loss / d s at s = p_y:

    A  = w_y * (gamma * u**(gamma-1) * log(s) - u**gamma / s)
    A' = w_y * (-gamma*(gamma-1) * u**(gamma-2) * log(s)
                + 2*gamma * u**(gamma-1) / s + u**gamma / s**2)

With t_c = [c == y] - p_c (the softmax Jacobian row for p_y):

    g_c = A * s * t_c
    h_c = s * t_c**2 * (A + s*A') - A * s * p_c * (1 - p_c)

At gamma = 0 this reduces exactly to weighted cross-entropy:
g_c = w_y (p_c - [c == y]), h_c = w_y p_c (1 - p_c).
"""
from __future__ import annotations

import numpy as np

from ..errors import ValidationError

PROB_CLIP = 1e-12


def softmax(margins: np.ndarray) -> np.ndarray:
    m = np.asarray(margins, dtype=np.float64)
    shifted = m - m.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def balanced_class_weights(labels, n_classes: int = None) -> np.ndarray:
    """w_c = n / (k * n_c) over the classes present in `labels`.

    k counts the present classes. A requested class with no examples gets
    n / k (the formula with unit count); it carries no training signal but
    keeps every weight positive.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ValidationError("cannot compute class weights from an empty label set")
    if n_classes is None:
        n_classes = int(labels.max()) + 1
    counts = np.bincount(labels, minlength=n_classes).astype(np.float64)
    n = float(labels.size)
    k = float(np.count_nonzero(counts))
    return np.where(counts > 0, n / (k * np.maximum(counts, 1.0)), n / k)


def _a_terms(s: np.ndarray, w: np.ndarray, gamma: float):
    """A(s) and A'(s); s must already be clipped away from 0 and 1."""
    u = 1.0 - s
    log_s = np.log(s)
    u_g = np.power(u, gamma)
    u_g1 = np.power(u, gamma - 1.0)
    u_g2 = np.power(u, gamma - 2.0)
    a = w * (gamma * u_g1 * log_s - u_g / s)
    a_prime = w * (-gamma * (gamma - 1.0) * u_g2 * log_s + 2.0 * gamma * u_g1 / s + u_g / s**2)
    return a, a_prime


def focal_grad_hess(margins: np.ndarray, labels: np.ndarray, gamma: float, class_weights: np.ndarray):
    """Vectorized per-class gradient and hessian, both shaped like margins."""
    if gamma < 0:
        raise ValidationError(f"gamma must be >= 0, got {gamma}")
    p = softmax(margins)
    p = np.clip(p, PROB_CLIP, 1.0 - PROB_CLIP)
    labels = np.asarray(labels, dtype=np.int64)
    rows = np.arange(len(labels))
    s = p[rows, labels]
    w = np.asarray(class_weights, dtype=np.float64)[labels]
    a, a_prime = _a_terms(s, w, float(gamma))
    t = -p
    t[rows, labels] += 1.0
    grad = (a * s)[:, None] * t
    hess = (s * (a + s * a_prime))[:, None] * t**2 - (a * s)[:, None] * (p * (1.0 - p))
    return grad, hess


def focal_loss_mean(margins: np.ndarray, labels: np.ndarray, gamma: float, class_weights: np.ndarray) -> float:
    p = softmax(margins)
    labels = np.asarray(labels, dtype=np.int64)
    s = np.clip(p[np.arange(len(labels)), labels], PROB_CLIP, 1.0 - PROB_CLIP)
    w = np.asarray(class_weights, dtype=np.float64)[labels]
    return float(np.mean(-w * (1.0 - s) ** float(gamma) * np.log(s)))


def focal_loss(probabilities, label: int, gamma: float, weights):
    """Loss, gradient, and hessian for one sample given simplex probabilities.

    The gradient/hessian are with respect to the per-class logits behind the
    probabilities (softmax parameterization). Probabilities are clamped to
    [1e-12, 1 - 1e-12] before the log.
    """
    p = np.asarray(probabilities, dtype=np.float64)
    if abs(p.sum() - 1.0) > 1e-9 or np.any(p < -1e-12):
        raise ValidationError("probabilities must lie on the simplex")
    if gamma < 0:
        raise ValidationError(f"gamma must be >= 0, got {gamma}")
    p = np.clip(p, PROB_CLIP, 1.0 - PROB_CLIP)
    label = int(label)
    w_vec = np.asarray(weights, dtype=np.float64)
    s = p[label]
    w = w_vec[label]
    loss = float(-w * (1.0 - s) ** float(gamma) * np.log(s))
    a, a_prime = _a_terms(np.array([s]), np.array([w]), float(gamma))
    a, a_prime = float(a[0]), float(a_prime[0])
    t = -p.copy()
    t[label] += 1.0
    grad = a * s * t
    hess = s * (a + s * a_prime) * t**2 - a * s * (p * (1.0 - p))
    return loss, grad, hess
