"""Word-anchored multimodal encoder producing the shared latent.

Language tokens run through an embedding and a first GRU stage to give
intermediate word states. Each word attends (sparsemax) over the visual and
audio steps; the attended features are gated, summed into a displacement,
rescaled against the word norm and added back before a second GRU stage.
The second stage is mean-pooled over valid words and mapped to ``d``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mird import tensor as T
from mird.codecs import ModalitySequence
from mird.nn import GRU, Embedding, Linear, Module, masked_mean
from mird.sparsemax import sparsemax_op
from mird.tensor import Tensor

NONVERBAL = ("v", "a")


@dataclass
class FusionState:
    w_mid: Tensor
    x_tilde: dict[str, Tensor]
    gates: dict[str, Tensor]
    h: Tensor
    lam: Tensor
    w_tilde: Tensor
    w_last: Tensor
    epsilon: float


class CrossModalAttention(Module):
    """Similarity: both operands projected to ``d_w``, then inner product."""

    def __init__(self, rng: np.random.Generator, d_w: int, d_m: int):
        self.q = Linear(rng, d_w, d_w)
        self.k = Linear(rng, d_m, d_w)

    def weights(self, w_mid: Tensor, x: ModalitySequence) -> Tensor:
        if x.modality not in NONVERBAL:
            raise ValueError(f"cross-modal attention takes v or a, got {x.modality!r}")
        if x.features.shape[1] == 0 or np.any(x.lengths == 0):
            raise ValueError(f"attend: empty {x.modality} sequence")
        scores = T.matmul(self.q(w_mid), T.swapaxes(self.k(Tensor(x.features)), -1, -2))
        mask = np.broadcast_to(x.mask[:, None, :], scores.shape)
        return sparsemax_op(scores, mask)

    def __call__(self, w_mid: Tensor, x: ModalitySequence) -> Tensor:
        return T.matmul(self.weights(w_mid, x), Tensor(x.features))


def cross_modal_attend(w_mid: Tensor, x_m: ModalitySequence, attn: CrossModalAttention) -> Tensor:
    return attn(w_mid, x_m)


def adaptive_gate(w_mid: Tensor, x_tilde: Tensor, proj: Linear) -> Tensor:
    if w_mid.shape[:-1] != x_tilde.shape[:-1]:
        raise T.ShapeError(f"adaptive_gate: row mismatch {w_mid.shape} vs {x_tilde.shape}")
    return T.sigmoid(proj(T.concat([w_mid, x_tilde], axis=-1)))


def displacement(gates: dict[str, Tensor], x_tildes: dict[str, Tensor],
                 maps: dict[str, Linear]) -> Tensor:
    missing = [m for m in NONVERBAL if m not in gates or m not in x_tildes]
    if missing:
        raise ValueError(f"displacement: missing modality {', '.join(missing)}")
    return gates["v"] * maps["v"](x_tildes["v"]) + gates["a"] * maps["a"](x_tildes["a"])


def inject(w_mid, h, epsilon: float) -> tuple[Tensor, Tensor]:
    """Return (w_mid + lam * h, lam) with lam_k = min(|w_k| / |h_k| * eps, 1).

    Rows with a zero displacement get lam = 1.
    """
    if epsilon <= 0:
        raise ValueError(f"inject: epsilon must be positive, got {epsilon}")
    w_mid, h = T.as_tensor(w_mid), T.as_tensor(h)
    if w_mid.shape != h.shape:
        raise T.ShapeError(f"inject: shapes {w_mid.shape} and {h.shape} differ")
    w_norm = T.l2_norm(w_mid, axis=-1, keepdims=True)
    h_norm = T.l2_norm(h, axis=-1, keepdims=True)
    zero = h_norm.data == 0
    ratio = w_norm / T.where(zero, 1.0, h_norm) * epsilon
    lam = T.where(zero, 1.0, T.minimum(ratio, 1.0))
    return w_mid + lam * h, T.reshape(lam, lam.shape[:-1])


class FusionEncoder(Module):
    def __init__(self, rng: np.random.Generator, vocab: int, d_v: int, d_a: int,
                 d_w: int, d: int, epsilon: float = 1.0):
        self.epsilon = epsilon
        self.embed = Embedding(rng, vocab, d_w)
        self.stage1 = GRU(rng, d_w, d_w)
        self.attend = {"v": CrossModalAttention(rng, d_w, d_v), "a": CrossModalAttention(rng, d_w, d_a)}
        self.gate = {"v": Linear(rng, d_w + d_v, d_w), "a": Linear(rng, d_w + d_a, d_w)}
        self.dis = {"v": Linear(rng, d_v, d_w), "a": Linear(rng, d_a, d_w)}
        self.stage2 = GRU(rng, d_w, d_w)
        self.fc = Linear(rng, d_w, d)

    def forward(self, x_v: ModalitySequence, x_l: ModalitySequence,
                x_a: ModalitySequence) -> tuple[Tensor, FusionState]:
        if x_l.features.shape[1] == 0 or np.any(x_l.lengths == 0):
            raise ValueError("encode_multimodal: empty language sequence")
        mask = x_l.mask
        w_mid = self.stage1(self.embed(x_l.features), mask)
        seqs = {"v": x_v, "a": x_a}
        x_tilde = {m: cross_modal_attend(w_mid, seqs[m], self.attend[m]) for m in NONVERBAL}
        gates = {m: adaptive_gate(w_mid, x_tilde[m], self.gate[m]) for m in NONVERBAL}
        h = displacement(gates, x_tilde, self.dis)
        w_tilde, lam = inject(w_mid, h, self.epsilon)
        w_last = self.stage2(w_tilde, mask)
        z_s = self.fc(masked_mean(w_last, mask))
        return z_s, FusionState(w_mid, x_tilde, gates, h, lam, w_tilde, w_last, self.epsilon)

    def __call__(self, x_v, x_l, x_a) -> Tensor:
        return self.forward(x_v, x_l, x_a)[0]


def encode_multimodal(x_v, x_l, x_a, encoder: FusionEncoder) -> Tensor:
    return encoder(x_v, x_l, x_a)
