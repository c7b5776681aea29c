"""Parameter containers and layers: linear maps, embeddings, GRU."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from mird import tensor as T
from mird.tensor import Tensor


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return T.parameter(rng.uniform(-limit, limit, size=shape or (fan_in, fan_out)))


class Module:
    """Anything holding parameters as attributes.

    Parameters are discovered by walking attributes in assignment order, so the
    order of ``named_parameters`` is the declaration order.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, val in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield full, val
            elif isinstance(val, Module):
                yield from val.named_parameters(full + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
            elif isinstance(val, dict):
                for k, item in val.items():
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{k}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]


class Linear(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int):
        self.weight = glorot(rng, d_in, d_out)
        self.bias = T.parameter(np.zeros(d_out))

    def __call__(self, x) -> Tensor:
        x = T.as_tensor(x)
        if x.ndim == 1:
            return (T.matmul(T.reshape(x, (1, -1)), self.weight) + self.bias)[0]
        return T.matmul(x, self.weight) + self.bias


class Embedding(Module):
    def __init__(self, rng: np.random.Generator, vocab: int, dim: int):
        self.table = T.parameter(rng.normal(0.0, 1.0 / np.sqrt(dim), size=(vocab, dim)))

    def __call__(self, ids) -> Tensor:
        return T.embedding(self.table, ids)


def _sig(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def gru_sequence(x, h0, w_x, w_h, b, mask=None) -> Tensor:
    """Run a GRU over ``x`` of shape (B, T, D_in) from state ``h0`` (B, H).

    Gate layout in the fused weights is [reset | update | candidate]:

        r = sig(x Wr + h Ur + br)     z = sig(x Wz + h Uz + bz)
        n = tanh(x Wn + r * (h Un) + bn)
        h' = (1 - z) * n + z * h

    Where ``mask[b, t]`` is false the state is carried unchanged, so padded
    steps have no effect on the output or on any gradient. Returns the
    state after every step, shape (B, T, H).
    """
    x, h0, w_x, w_h, b = (T.as_tensor(t) for t in (x, h0, w_x, w_h, b))
    B, L, _ = x.shape
    H = h0.shape[-1]
    if w_x.shape != (x.shape[-1], 3 * H) or w_h.shape != (H, 3 * H):
        raise T.ShapeError(f"gru: weight shapes {w_x.shape}, {w_h.shape} do not fit "
                           f"input {x.shape} and state {h0.shape}")
    if L == 0:
        raise ValueError("gru: empty sequence")
    m = np.ones((B, L), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    xw = x.data @ w_x.data + b.data
    U = w_h.data
    hs = np.empty((B, L + 1, H))
    hs[:, 0] = h0.data
    cache = []
    for t in range(L):
        hp = hs[:, t]
        hw = hp @ U
        a = xw[:, t]
        r = _sig(a[:, :H] + hw[:, :H])
        z = _sig(a[:, H:2 * H] + hw[:, H:2 * H])
        n = np.tanh(a[:, 2 * H:] + r * hw[:, 2 * H:])
        hn = (1.0 - z) * n + z * hp
        hs[:, t + 1] = np.where(m[:, t, None], hn, hp)
        cache.append((r, z, n, hw[:, 2 * H:]))

    def backward(g):
        dxw = np.zeros_like(xw)
        dU = np.zeros_like(U)
        dh = np.zeros((B, H))
        for t in range(L - 1, -1, -1):
            r, z, n, hwn = cache[t]
            hp = hs[:, t]
            dh_t = dh + g[:, t]
            mt = m[:, t, None]
            dnew = np.where(mt, dh_t, 0.0)
            dprev = np.where(mt, 0.0, dh_t) + dnew * z
            dn = dnew * (1.0 - z)
            dz = dnew * (hp - n)
            dan = dn * (1.0 - n * n)
            dr = dan * hwn
            dar = dr * r * (1.0 - r)
            daz = dz * z * (1.0 - z)
            dxw[:, t, :H] = dar
            dxw[:, t, H:2 * H] = daz
            dxw[:, t, 2 * H:] = dan
            dhw = np.concatenate([dar, daz, dan * r], axis=-1)
            dU += hp.T @ dhw
            dh = dprev + dhw @ U.T
        dx = dxw @ w_x.data.T
        dwx = np.einsum("btd,bth->dh", x.data, dxw)
        db = dxw.sum(axis=(0, 1))
        return dx, dh, dwx, dU, db

    return T.custom(hs[:, 1:], (x, h0, w_x, w_h, b), "gru", backward)


class GRU(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, hidden: int):
        self.hidden = hidden
        self.w_x = glorot(rng, d_in, hidden, shape=(d_in, 3 * hidden))
        self.w_h = glorot(rng, hidden, hidden, shape=(hidden, 3 * hidden))
        self.b = T.parameter(np.zeros(3 * hidden))

    def __call__(self, x, mask=None, h0=None) -> Tensor:
        x = T.as_tensor(x)
        if h0 is None:
            h0 = Tensor(np.zeros((x.shape[0], self.hidden)))
        return gru_sequence(x, h0, self.w_x, self.w_h, self.b, mask)


def masked_mean(x: Tensor, mask) -> Tensor:
    """Mean over axis 1 of (B, T, D) using only positions where ``mask`` holds."""
    mask = np.asarray(mask, dtype=bool)
    counts = mask.sum(axis=1, keepdims=True).astype(np.float64)
    if np.any(counts == 0):
        raise ValueError("masked_mean: a row has no valid positions")
    kept = T.where(mask[..., None], x, 0.0)
    return T.sum_(kept, axis=1) / counts
