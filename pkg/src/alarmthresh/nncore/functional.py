"""Differentiable activations, attention and losses."""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf, expit

from .tensor import ShapeError, Tensor, where

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


# -- activations -----------------------------------------------------------------


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF."""
    a = x.data
    cdf = 0.5 * (1.0 + erf(a / _SQRT2))

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * a * a)
        return (g * (cdf + a * pdf),)

    return Tensor._result(a * cdf, (x,), backward)


def softplus(x: Tensor) -> Tensor:
    a = x.data
    return Tensor._result(np.logaddexp(0.0, a), (x,), lambda g: (g * expit(a),))


def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.data)
    return Tensor._result(out, (x,), lambda g: (g * out * (1.0 - out),))


def relu(x: Tensor) -> Tensor:
    a = x.data
    mask = a > 0
    return Tensor._result(np.where(mask, a, 0.0).astype(a.dtype), (x,), lambda g: (g * mask,))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    a = x.data
    if a.shape[axis] == 0:
        raise ValueError("softmax over an empty axis")
    e = np.exp(a - a.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._result(out, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    a = x.data
    if a.shape[axis] == 0:
        raise ValueError("log_softmax over an empty axis")
    shifted = a - a.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return Tensor._result(out, (x,), backward)


def layer_norm(
    x: Tensor, gain: Tensor | None = None, bias: Tensor | None = None, eps: float = 1e-5
) -> Tensor:
    """Normalise over the last axis, then apply the optional affine."""
    a = x.data
    centered = a - a.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    out = xhat
    if gain is not None:
        out = out * gain.data
    if bias is not None:
        out = out + bias.data
    lead = tuple(range(a.ndim - 1))

    def backward(g):
        dxhat = g * gain.data if gain is not None else g
        gx = inv_std * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        grads = [gx]
        if gain is not None:
            grads.append((g * xhat).sum(axis=lead))
        if bias is not None:
            grads.append(g.sum(axis=lead))
        return grads

    parents = tuple(t for t in (x, gain, bias) if t is not None)
    return Tensor._result(out, parents, backward)


# -- attention --------------------------------------------------------------------


def _split_heads(t: Tensor, n_heads: int) -> Tensor:
    *lead, n, d = t.shape
    return t.reshape(*lead, n, n_heads, d // n_heads).swapaxes(-2, -3)


def _merge_heads(t: Tensor) -> Tensor:
    *lead, h, n, dh = t.shape
    return t.swapaxes(-2, -3).reshape(*lead, n, h * dh)


def scaled_dot_product_attention(
    q: Tensor, k: Tensor, v: Tensor, n_heads: int = 1, return_weights: bool = False
):
    """Multi-head ``softmax(Q K^T / sqrt(d_k)) V`` over already-projected inputs.

    ``q`` is ``(..., n_q, d)``, ``k`` is ``(..., n_k, d)`` and ``v`` is
    ``(..., n_k, d_v)``. The last dimension is split into ``n_heads`` equal
    heads, attention runs per head over the key axis, and the heads are
    concatenated again. Projections live in :class:`~.layers.MultiHeadAttention`.
    """
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"query/key width mismatch: {q.shape} vs {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"key/value length mismatch: {k.shape} vs {v.shape}")
    if q.shape[-1] % n_heads or v.shape[-1] % n_heads:
        raise ShapeError(f"width {q.shape[-1]} not divisible by {n_heads} heads")
    qh, kh, vh = (_split_heads(t, n_heads) for t in (q, k, v))
    d_k = q.shape[-1] // n_heads
    scores = (qh @ kh.swapaxes(-1, -2)) * (1.0 / math.sqrt(d_k))
    weights = softmax(scores, axis=-1)
    out = _merge_heads(weights @ vh)
    return (out, weights) if return_weights else out


# -- losses -------------------------------------------------------------------------


def _target(y, like: Tensor) -> Tensor:
    return y if isinstance(y, Tensor) else Tensor(np.asarray(y, dtype=like.dtype))


def pseudo_huber(y, y_hat: Tensor, delta: float = 1.0) -> Tensor:
    """Mean of ``delta^2 * (sqrt(1 + ((y - y_hat)/delta)^2) - 1)``."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    r = (_target(y, y_hat) - y_hat) * (1.0 / delta)
    return ((r * r + 1.0).sqrt() - 1.0).mean() * (delta * delta)


def huber(y, y_hat: Tensor, delta: float = 1.0) -> Tensor:
    if delta <= 0:
        raise ValueError("delta must be positive")
    r = _target(y, y_hat) - y_hat
    quadratic = r * r * 0.5
    linear = (r.abs() - 0.5 * delta) * delta
    return where(np.abs(r.data) <= delta, quadratic, linear).mean()


def pinball(y, y_hat: Tensor, tau: float) -> Tensor:
    """Quantile check loss: ``tau*max(y-y_hat,0) + (1-tau)*max(y_hat-y,0)``, batch mean."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    r = _target(y, y_hat) - y_hat
    return (relu(r) * tau + relu(-r) * (1.0 - tau)).mean()


def quantile3(y, q10: Tensor, q50: Tensor, q90: Tensor) -> Tensor:
    return (pinball(y, q10, 0.10) + pinball(y, q50, 0.50) + pinball(y, q90, 0.90)) * (1.0 / 3.0)


def cross_entropy(logits: Tensor, classes) -> Tensor:
    """Mean negative log-likelihood of integer ``classes`` under ``softmax(logits)``."""
    classes = np.asarray(classes, dtype=np.intp)
    n_classes = logits.shape[-1]
    if classes.size and (classes.min() < 0 or classes.max() >= n_classes):
        raise ValueError("class index out of range")
    logp = log_softmax(logits, axis=-1)
    picked = logp[np.arange(len(classes)), classes]
    return -picked.mean()


def binary_cross_entropy(p: Tensor, target, eps: float = 1e-7) -> Tensor:
    t = np.asarray(target, dtype=p.dtype)
    clipped = clamp(p, eps, 1.0 - eps)
    return -(clipped.log() * t + (1.0 - clipped).log() * (1.0 - t)).mean()


def clamp(x: Tensor, low: float, high: float) -> Tensor:
    a = x.data
    inside = (a >= low) & (a <= high)
    return Tensor._result(np.clip(a, low, high), (x,), lambda g: (g * inside,))
