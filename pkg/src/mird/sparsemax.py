"""Sparsemax: Euclidean projection onto the probability simplex."""

from __future__ import annotations

import numpy as np

from mird.tensor import Tensor, as_tensor, custom

# Stand-in score for masked positions. Any finite value this low can never
# enter the support, and it keeps the threshold arithmetic free of inf/nan.
_MASKED = -1e30


def _threshold(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Threshold tau and support size k along the last axis."""
    n = z.shape[-1]
    order = np.argsort(-z, axis=-1, kind="stable")
    zs = np.take_along_axis(z, order, axis=-1)
    csum = np.cumsum(zs, axis=-1)
    ks = np.arange(1, n + 1, dtype=np.float64)
    cond = 1.0 + ks * zs > csum
    # cond holds on a prefix; the support size is its length
    k = cond.sum(axis=-1)
    tau = (np.take_along_axis(csum, (k - 1)[..., None], axis=-1)[..., 0] - 1.0) / k
    return tau, k


def _check(v: np.ndarray) -> None:
    if v.ndim == 0 or v.shape[-1] < 1:
        raise ValueError("sparsemax: input must have length >= 1")
    if not np.all(np.isfinite(v)):
        raise ValueError("sparsemax: input contains non-finite entries")


def sparsemax(v, mask=None) -> np.ndarray:
    """Project each row (last axis) of ``v`` onto the simplex.

    ``mask`` (same shape, boolean) excludes positions; every row must keep at
    least one unmasked entry. Masked outputs are exactly zero.
    """
    v = np.asarray(v, dtype=np.float64)
    _check(v)
    z = v if mask is None else np.where(mask, v, _MASKED)
    if mask is not None and not np.all(np.asarray(mask).any(axis=-1)):
        raise ValueError("sparsemax: a row has every position masked")
    # centring on the row max makes exactly representable shifts exact no-ops
    z = z - z.max(axis=-1, keepdims=True)
    tau, _ = _threshold(z)
    return np.maximum(z - tau[..., None], 0.0)


def sparsemax_jvp(v, g_out, mask=None) -> np.ndarray:
    """Vector-Jacobian product of sparsemax at ``v`` (the Jacobian is
    symmetric, so this also serves as the JVP)."""
    v = np.asarray(v, dtype=np.float64)
    g_out = np.asarray(g_out, dtype=np.float64)
    if v.shape != g_out.shape:
        raise ValueError(f"sparsemax_jvp: shapes {v.shape} and {g_out.shape} differ")
    return _vjp(sparsemax(v, mask), g_out)


def _vjp(p: np.ndarray, g: np.ndarray) -> np.ndarray:
    support = p > 0
    k = support.sum(axis=-1, keepdims=True)
    g_mean = np.where(support, g, 0.0).sum(axis=-1, keepdims=True) / k
    return np.where(support, g - g_mean, 0.0)


def sparsemax_op(scores, mask=None) -> Tensor:
    """Differentiable row-wise sparsemax on a :class:`Tensor`."""
    scores = as_tensor(scores)
    p = sparsemax(scores.data, mask)
    return custom(p, (scores,), "sparsemax", lambda g: (_vjp(p, g),))
