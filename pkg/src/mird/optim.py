"""Adam and AdamW over :class:`~mird.tensor.Tensor` parameters."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from mird.tensor import Tensor


@dataclass
class OptimizerState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray | None],
              state: OptimizerState, decoupled: bool = False) -> None:
    """One in-place Adam update with bias correction.

    With ``decoupled=True`` this is AdamW: parameters are first shrunk by
    ``lr * weight_decay`` independently of the gradient. A ``None`` gradient
    is treated as zero.
    """
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params) or len(grads) != len(params):
        raise ValueError("adam_step: parameter, gradient and state counts differ")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        if state.m[i].shape != p.data.shape:
            raise ValueError(f"adam_step: moment shape {state.m[i].shape} does not match "
                             f"parameter shape {p.data.shape}")
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.data.shape:
            raise ValueError(f"adam_step: gradient shape {g.shape} does not match "
                             f"parameter shape {p.data.shape}")
        m = state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        v = state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        if decoupled and state.weight_decay:
            p.data = p.data * (1.0 - state.lr * state.weight_decay)
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


class Adam:
    decoupled = False

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = list(params)
        self.state = OptimizerState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps,
                                    weight_decay=weight_decay)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, max_norm: float | None = None) -> None:
        grads = [p.grad for p in self.params]
        if max_norm is not None:
            grads = clip_grad_norm(grads, max_norm)
        adam_step(self.params, grads, self.state, decoupled=self.decoupled)


class AdamW(Adam):
    decoupled = True

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.01):
        super().__init__(params, lr, betas, eps, weight_decay)


def clip_grad_norm(grads: Sequence[np.ndarray | None], max_norm: float) -> list[np.ndarray | None]:
    total = np.sqrt(sum(float((g * g).sum()) for g in grads if g is not None))
    if total <= max_norm or total == 0.0:
        return list(grads)
    scale = max_norm / total
    return [None if g is None else g * scale for g in grads]
