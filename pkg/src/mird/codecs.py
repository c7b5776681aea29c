"""Modality-specific encoders and decoders, and the reconstruction loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mird import tensor as T
from mird.nn import GRU, Embedding, Linear, Module
from mird.tensor import Tensor

MODALITIES = ("v", "l", "a")
LOG_GUARD = 1e-8


@dataclass
class ModalitySequence:
    """A padded batch of one modality's sequences.

    ``features`` is (B, T, d_m) for the real-valued modalities and (B, T)
    integer token ids for language. Row ``b`` is valid on its first
    ``lengths[b]`` steps.
    """

    modality: str
    features: np.ndarray
    lengths: np.ndarray

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")
        self.lengths = np.asarray(self.lengths, dtype=np.int64)
        if self.modality == "l":
            self.features = np.asarray(self.features, dtype=np.int64)
            if self.features.ndim != 2:
                raise ValueError(f"language features must be (B, T) token ids, got {self.features.shape}")
        else:
            self.features = np.asarray(self.features, dtype=np.float64)
            if self.features.ndim != 3:
                raise ValueError(f"{self.modality} features must be (B, T, d), got {self.features.shape}")
        if self.lengths.shape != (self.features.shape[0],):
            raise ValueError("lengths must give one entry per row")
        if np.any(self.lengths < 0) or np.any(self.lengths > self.features.shape[1]):
            raise ValueError("lengths outside [0, T]")

    @property
    def mask(self) -> np.ndarray:
        return np.arange(self.features.shape[1])[None, :] < self.lengths[:, None]

    @property
    def batch_size(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return 1 if self.modality == "l" else self.features.shape[2]

    def take(self, idx) -> "ModalitySequence":
        return ModalitySequence(self.modality, self.features[idx], self.lengths[idx])


class ModalityEncoder(Module):
    """GRU over the valid steps, final state through a linear map to ``d``.

    For language, token ids pass through a learned embedding first.
    """

    def __init__(self, rng: np.random.Generator, modality: str, d_in: int, hidden: int,
                 d: int, vocab: int | None = None):
        self.modality = modality
        if modality == "l":
            if vocab is None:
                raise ValueError("language encoder needs a vocabulary size")
            self.embed = Embedding(rng, vocab, d_in)
        self.rnn = GRU(rng, d_in, hidden)
        self.out = Linear(rng, hidden, d)

    def __call__(self, x: ModalitySequence) -> Tensor:
        if x.modality != self.modality:
            raise ValueError(f"encoder for {self.modality!r} got {x.modality!r} input")
        if x.features.shape[1] == 0 or np.any(x.lengths == 0):
            raise ValueError(f"encode: empty {x.modality} sequence")
        inp = self.embed(x.features) if self.modality == "l" else Tensor(x.features)
        states = self.rnn(inp, x.mask)
        # padded steps carry the state forward, so the last column is final
        return self.out(states[:, -1])


class ModalityDecoder(Module):
    """GRU unrolled from the concatenated [private; shared] latent.

    The seed sets the initial state (through a tanh map) and is also the
    input at every step. Real modalities emit d_m-dim frames, language
    emits vocabulary logits.
    """

    def __init__(self, rng: np.random.Generator, modality: str, d: int, hidden: int, d_out: int):
        self.modality = modality
        self.init = Linear(rng, 2 * d, hidden)
        self.rnn = GRU(rng, 2 * d, hidden)
        self.out = Linear(rng, hidden, d_out)

    def __call__(self, z_m: Tensor, z_s: Tensor, target_len: int) -> Tensor:
        if target_len <= 0:
            raise ValueError(f"decode: target_len must be positive, got {target_len}")
        if z_m.shape != z_s.shape:
            raise T.ShapeError(f"decode: latent shapes {z_m.shape} and {z_s.shape} differ")
        seed = T.concat([z_m, z_s], axis=-1)
        h0 = T.tanh(self.init(seed))
        steps = T.reshape(seed, (seed.shape[0], 1, seed.shape[1])) + np.zeros((1, target_len, 1))
        return self.out(self.rnn(steps, h0=h0))


def masked_mse(recon: Tensor, target: ModalitySequence) -> Tensor:
    mask = target.mask
    n = mask.sum() * target.features.shape[2]
    if n == 0:
        raise ValueError(f"recon_loss: every {target.modality} step is masked")
    err = T.squared_error(recon, Tensor(target.features))
    return T.sum_(T.where(mask[..., None], err, 0.0)) / float(n)


def masked_cross_entropy(logits: Tensor, target: ModalitySequence) -> Tensor:
    mask = target.mask
    n = mask.sum()
    if n == 0:
        raise ValueError("recon_loss: every language step is masked")
    ce = T.cross_entropy_logits(logits, target.features)
    return T.sum_(T.where(mask, ce, 0.0)) / float(n)


def recon_loss(recons: dict[str, Tensor], originals: dict[str, ModalitySequence],
               guard: float = LOG_GUARD) -> Tensor:
    """Sum over modalities of log(inner loss + guard): MSE for v and a,
    token cross-entropy for l, each averaged over unmasked elements."""
    total = None
    for m in MODALITIES:
        inner = (masked_cross_entropy if m == "l" else masked_mse)(recons[m], originals[m])
        term = T.log(inner + guard)
        total = term if total is None else total + term
    return total
