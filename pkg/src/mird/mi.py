"""CLUB mutual-information upper bounds with Gaussian variational conditionals.

Each estimator q(y|x) is a diagonal Gaussian whose mean and log-variance come
from a one-hidden-layer tanh network. Training alternates two objectives:

* ``nll_loss`` fits q to the current pairs; only q's parameters get gradient.
* ``club_estimate`` scores the pairs with q held fixed; only the
  representations get gradient.
"""

from __future__ import annotations

import math
from typing import Mapping

import numpy as np

from mird import tensor as T
from mird.nn import Linear, Module
from mird.tensor import Tensor

LOGVAR_CLAMP = 10.0
HIDDEN = 32

LATENT_ORDER = ("v", "l", "a", "s")
# q(second | first) for every unordered pair, first earlier in LATENT_ORDER
LATENT_PAIRS = (("v", "l"), ("v", "a"), ("l", "a"), ("v", "s"), ("l", "s"), ("a", "s"))
INPUT_PAIRS = (("xv", "s"), ("xl", "s"), ("xa", "s"))
ALL_PAIRS = LATENT_PAIRS + INPUT_PAIRS


def pair_name(pair: tuple[str, str]) -> str:
    return f"{pair[0]}|{pair[1]}"


class GaussianConditional(Module):
    def __init__(self, rng: np.random.Generator, d_x: int, d_y: int, hidden: int = HIDDEN):
        self.d_x, self.d_y = d_x, d_y
        self.hidden = Linear(rng, d_x, hidden)
        self.mu = Linear(rng, hidden, d_y)
        self.logvar = Linear(rng, hidden, d_y)

    def __call__(self, x, frozen: bool = False) -> tuple[Tensor, Tensor]:
        """Mean and clamped log-variance of q(.|x).

        With ``frozen`` the network weights enter as constants, so no
        gradient reaches them.
        """
        x = T.as_tensor(x)
        if x.shape[-1] != self.d_x:
            raise T.ShapeError(f"conditional expects inputs of width {self.d_x}, got {x.shape}")
        if frozen:
            w = {n: Tensor(p.data) for n, p in self.named_parameters()}
            h = T.tanh(T.matmul(x, w["hidden.weight"]) + w["hidden.bias"])
            mu = T.matmul(h, w["mu.weight"]) + w["mu.bias"]
            lv = T.matmul(h, w["logvar.weight"]) + w["logvar.bias"]
        else:
            h = T.tanh(self.hidden(x))
            mu, lv = self.mu(h), self.logvar(h)
        return mu, T.clip(lv, -LOGVAR_CLAMP, LOGVAR_CLAMP)


def _check_pairs(q: GaussianConditional, x: Tensor, y: Tensor, op: str) -> None:
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise T.ShapeError(f"{op}: x {x.shape} and y {y.shape} are not aligned pair batches")
    if x.shape[0] == 0:
        raise ValueError(f"{op}: empty pair batch")
    if y.shape[1] != q.d_y:
        raise T.ShapeError(f"{op}: conditional outputs width {q.d_y}, y has {y.shape}")


def log_prob(q: GaussianConditional, x, y, frozen: bool = False) -> Tensor:
    """Per-row log q(y_i | x_i), summed over dimensions."""
    x, y = T.as_tensor(x), T.as_tensor(y)
    if x.ndim == 1:
        x, y = T.reshape(x, (1, -1)), T.reshape(y, (1, -1))
    _check_pairs(q, x, y, "log_prob")
    mu, lv = q(x, frozen)
    quad = T.square(y - mu) / T.exp(lv)
    return T.sum_(quad + lv + math.log(2.0 * math.pi), axis=-1) * -0.5


def club_estimate(q: GaussianConditional, x, y, frozen: bool = True) -> Tensor:
    """CLUB estimate mean_i log q(y_i|x_i) - mean_ij log q(y_j|x_i).

    The all-pairs term is evaluated in O(N d): for a diagonal Gaussian,
    mean_j (y_j - mu_i)^2 = var(y) + (mean(y) - mu_i)^2. The batch mean is
    taken as y_0 + mean(y - y_0), which keeps one-row and constant-y batches
    at exactly zero. The log-variance terms cancel between the two sums.
    """
    x, y = T.as_tensor(x), T.as_tensor(y)
    _check_pairs(q, x, y, "club_estimate")
    mu, lv = q(x, frozen)
    y0 = y[0:1]
    y_bar = y0 + T.mean(y - y0, axis=0, keepdims=True)
    y_var = T.mean(T.square(y - y_bar), axis=0, keepdims=True)
    inv2 = 0.5 / T.exp(lv)
    positive = T.square(y - mu) * inv2
    negative = (y_var + T.square(y_bar - mu)) * inv2
    return T.mean(T.sum_(negative - positive, axis=-1))


def nll_loss(q: GaussianConditional, x, y) -> Tensor:
    """-mean_i log q(y_i|x_i) with the pairs detached."""
    x, y = T.as_tensor(x).detach(), T.as_tensor(y).detach()
    _check_pairs(q, x, y, "nll_loss")
    return -T.mean(log_prob(q, x, y))


class MIEstimators(Module):
    """The nine conditionals: six latent pairs plus three (input, shared)."""

    def __init__(self, rng: np.random.Generator, d: int, input_dims: Mapping[str, int]):
        self.q = {}
        for a, b in LATENT_PAIRS:
            self.q[pair_name((a, b))] = GaussianConditional(rng, d, d)
        for a, b in INPUT_PAIRS:
            self.q[pair_name((a, b))] = GaussianConditional(rng, input_dims[a[1]], d)

    def __getitem__(self, name: str) -> GaussianConditional:
        return self.q[name]


def _operands(pair, latents, inputs):
    a, b = pair
    x = inputs[a[1]] if a.startswith("x") else latents[a]
    return x, latents[b]


def _pairs(latents, inputs, estimators, include_inputs: bool, op: str):
    pairs = ALL_PAIRS if include_inputs else LATENT_PAIRS
    q = estimators.q if isinstance(estimators, MIEstimators) else estimators
    missing = [pair_name(p) for p in pairs if pair_name(p) not in q]
    if missing:
        raise KeyError(f"{op}: missing estimators for {', '.join(missing)}")
    for p in pairs:
        x, y = _operands(p, latents, inputs)
        yield pair_name(p), q[pair_name(p)], x, y


def mim_terms(latents, inputs, estimators, include_inputs: bool = True) -> dict[str, Tensor]:
    return {name: club_estimate(q, x, y, frozen=True)
            for name, q, x, y in _pairs(latents, inputs, estimators, include_inputs, "mim_loss")}


def mim_loss(latents, inputs, estimators, include_inputs: bool = True) -> Tensor:
    """Sum of CLUB estimates over the six latent pairs and, optionally, the
    three (pooled input, shared latent) pairs. May be negative."""
    terms = list(mim_terms(latents, inputs, estimators, include_inputs).values())
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total


def lld_loss(latents, inputs, estimators, include_inputs: bool = True) -> Tensor:
    """Sum of the matching negative log-likelihoods; reaches only q's weights."""
    total = None
    for _, q, x, y in _pairs(latents, inputs, estimators, include_inputs, "lld_loss"):
        term = nll_loss(q, x, y)
        total = term if total is None else total + term
    return total


def orthogonality_loss(z_a, z_b) -> Tensor:
    """Squared Frobenius norm of the cross-Gram matrix z_a @ z_b.T."""
    z_a, z_b = T.as_tensor(z_a), T.as_tensor(z_b)
    if z_a.shape != z_b.shape or z_a.ndim != 2:
        raise T.ShapeError(f"orthogonality_loss: shapes {z_a.shape} and {z_b.shape} differ")
    gram = T.matmul(z_a, T.swapaxes(z_b, 0, 1))
    return T.sum_(T.square(gram))


def oc_loss(latents: Mapping[str, Tensor]) -> Tensor:
    total = None
    for a, b in LATENT_PAIRS:
        term = orthogonality_loss(latents[a], latents[b])
        total = term if total is None else total + term
    return total
