"""Model assembly, loss composition and the alternating training loop.

One outer iteration handles one labeled batch plus its share of unlabeled
samples: the nine variational conditionals take ``inner_steps`` Adam steps on
the negative log-likelihood of the current (detached) representations, then
the model takes one AdamW step on

    L = L_reg + L_recon + alpha * L_mim

with the conditionals frozen. An epoch is one pass over the labeled data.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from mird import tensor as T
from mird.codecs import MODALITIES, LOG_GUARD, ModalityDecoder, ModalityEncoder, recon_loss
from mird.data import Batch, Dataset, collate, pooled_inputs
from mird.fusion import FusionEncoder
from mird.metrics import MetricsReport, compute_metrics
from mird.mi import LATENT_PAIRS, MIEstimators, lld_loss, mim_terms, oc_loss, pair_name
from mird.nn import Linear, Module
from mird.optim import Adam, AdamW
from mird.tensor import Tensor

MODES = ("mim", "oc", "nc")
TRACE_HEADER = ("epoch", "l_reg", "l_recon", "l_mim", "val_acc", "val_f1", "val_mae", "val_corr")


@dataclass
class TrainConfig:
    """Hyperparameters. Defaults follow the published training regime; see
    :func:`desk_profile` for the settings used on the synthetic benchmark."""

    alpha: float = 0.1
    lr_mi: float = 1e-3
    lr_main: float = 1e-5
    epochs: int = 100
    inner_steps: int = 5
    batch_size: int = 32
    split_rate: float = 0.0
    d: int = 64
    d_w: int = 32
    hidden: int = 32
    embed_dim: int = 16
    reg_hidden: int = 64
    epsilon: float = 1.0
    weight_decay: float = 0.01
    grad_clip: float = 5.0
    loss_guard: float = LOG_GUARD
    mode: str = "mim"
    use_recon: bool = True
    mim_inputs: bool = True
    seed: int = 0

    def validate(self) -> None:
        if self.inner_steps < 1:
            raise ValueError("inner_steps (T') must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2; CLUB is degenerate on one pair")
        if self.split_rate < 0:
            raise ValueError("split_rate must be >= 0")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    @property
    def n_unlabeled(self) -> int:
        return int(round(self.split_rate * self.batch_size))

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def desk_profile(**overrides) -> TrainConfig:
    """Settings for the synthetic benchmark. The models train from scratch,
    so the main learning rate is far above the fine-tuning rate."""
    cfg = TrainConfig(lr_main=5e-4, epochs=30, split_rate=3.0)
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg


@dataclass
class LatentBundle:
    z_v: Tensor
    z_l: Tensor
    z_a: Tensor
    z_s: Tensor

    @property
    def p(self) -> Tensor:
        return T.concat([self.z_v, self.z_l, self.z_a, self.z_s], axis=-1)

    def as_dict(self) -> dict[str, Tensor]:
        return {"v": self.z_v, "l": self.z_l, "a": self.z_a, "s": self.z_s}

    def take(self, idx) -> "LatentBundle":
        return LatentBundle(*(z[idx] for z in (self.z_v, self.z_l, self.z_a, self.z_s)))


class Regressor(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, hidden: int):
        self.l1 = Linear(rng, d_in, hidden)
        self.l2 = Linear(rng, hidden, 1)

    def __call__(self, p: Tensor) -> Tensor:
        return T.reshape(self.l2(T.tanh(self.l1(p))), (p.shape[0],))


class MIRD(Module):
    """Encoders, decoders and regressor (theta). The variational
    conditionals (theta_var) live in ``estimators`` and are kept apart."""

    def __init__(self, cfg: TrainConfig, d_v: int, d_a: int, vocab: int):
        rng = np.random.default_rng(cfg.seed)
        self.dims = {"v": d_v, "a": d_a, "vocab": vocab}
        self.enc = {
            "v": ModalityEncoder(rng, "v", d_v, cfg.hidden, cfg.d),
            "l": ModalityEncoder(rng, "l", cfg.embed_dim, cfg.hidden, cfg.d, vocab=vocab),
            "a": ModalityEncoder(rng, "a", d_a, cfg.hidden, cfg.d),
        }
        self.fusion = FusionEncoder(rng, vocab, d_v, d_a, cfg.d_w, cfg.d, cfg.epsilon)
        self.dec = {
            "v": ModalityDecoder(rng, "v", cfg.d, cfg.hidden, d_v),
            "l": ModalityDecoder(rng, "l", cfg.d, cfg.hidden, vocab),
            "a": ModalityDecoder(rng, "a", cfg.d, cfg.hidden, d_a),
        }
        self.reg = Regressor(rng, 4 * cfg.d, cfg.reg_hidden)
        self.estimators = MIEstimators(rng, cfg.d, {"v": d_v, "l": vocab, "a": d_a})

    def theta(self) -> list[tuple[str, Tensor]]:
        return [(n, p) for n, p in self.named_parameters() if not n.startswith("estimators.")]

    def theta_var(self) -> list[tuple[str, Tensor]]:
        return list(self.estimators.named_parameters("estimators."))

    def encode(self, batch: Batch) -> LatentBundle:
        seqs = batch.seqs()
        return LatentBundle(self.enc["v"](seqs["v"]), self.enc["l"](seqs["l"]),
                            self.enc["a"](seqs["a"]), self.fusion(batch.v, batch.l, batch.a))

    def reconstruct(self, bundle: LatentBundle, batch: Batch) -> dict[str, Tensor]:
        z = bundle.as_dict()
        seqs = batch.seqs()
        return {m: self.dec[m](z[m], z["s"], seqs[m].features.shape[1]) for m in MODALITIES}

    def predict(self, bundle: LatentBundle) -> Tensor:
        return self.reg(bundle.p)


def predict(bundle: LatentBundle, regressor: Regressor) -> Tensor:
    return regressor(bundle.p)


def regression_loss(preds, labels, guard: float = LOG_GUARD) -> Tensor:
    """log(mean squared error + guard)."""
    preds = T.as_tensor(preds)
    labels = np.asarray(labels, dtype=np.float64)
    if preds.shape != labels.shape:
        raise T.ShapeError(f"regression_loss: shapes {preds.shape} and {labels.shape} differ")
    if labels.size == 0:
        raise ValueError("regression_loss: empty batch")
    return T.log(T.mean(T.squared_error(preds, Tensor(labels))) + guard)


def total_loss(l_reg, l_recon, l_mim, alpha: float) -> Tensor:
    return T.as_tensor(l_reg) + l_recon + alpha * T.as_tensor(l_mim)


@dataclass
class EpochRecord:
    epoch: int
    l_reg: float
    l_recon: float
    l_mim: float
    val: MetricsReport | None
    mi_latent: float
    train_loss: float


@dataclass
class TrainTrace:
    records: list[EpochRecord] = field(default_factory=list)
    # per outer iteration: (theta_var updates, theta updates)
    updates: list[tuple[int, int]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def rows(self) -> list[tuple]:
        out = []
        for r in self.records:
            v = r.val
            vals = (v.acc, v.f1, v.mae, v.corr) if v else (math.nan,) * 4
            out.append((r.epoch, r.l_reg, r.l_recon, r.l_mim) + vals)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for row in self.rows():
            w.writerow([row[0]] + [repr(float(x)) for x in row[1:]])
        return buf.getvalue()

    def mi_series(self) -> np.ndarray:
        return np.array([r.mi_latent for r in self.records])


def _combined(labeled: Dataset, idx_l, unlabeled: Dataset | None, idx_u) -> Batch:
    samples = [labeled.samples[i] for i in idx_l]
    n_lab = len(samples)
    if unlabeled is not None and len(idx_u):
        samples = samples + [unlabeled.samples[i] for i in idx_u]
    batch = collate(samples, labeled.d_v, labeled.d_a)
    # only the labeled head of the batch counts as labeled
    batch.labeled[n_lab:] = False
    return batch


def evaluate(model: MIRD, ds: Dataset, batch_size: int = 256) -> tuple[np.ndarray, MetricsReport | None]:
    """Predictions over ``ds`` and, if it is labeled, its metrics."""
    preds = []
    with T.no_grad():
        for start in range(0, len(ds), batch_size):
            b = ds.batch(range(start, min(start + batch_size, len(ds))))
            preds.append(model.predict(model.encode(b)).data)
    p = np.concatenate(preds)
    return p, (compute_metrics(p, ds.labels()) if ds.labeled else None)


def encode_dataset(model: MIRD, ds: Dataset, batch_size: int = 256) -> dict[str, np.ndarray]:
    out: dict[str, list] = {k: [] for k in ("v", "l", "a", "s")}
    with T.no_grad():
        for start in range(0, len(ds), batch_size):
            b = ds.batch(range(start, min(start + batch_size, len(ds))))
            for k, z in model.encode(b).as_dict().items():
                out[k].append(z.data)
    return {k: np.concatenate(v) for k, v in out.items()}


def compute_losses(model: MIRD, cfg: TrainConfig, batch: Batch, bundle: LatentBundle | None = None,
                   inputs: dict[str, np.ndarray] | None = None) -> dict:
    """The model objective on one combined batch: L_reg on the labeled rows,
    L_recon and the constraint term on all rows, and their weighted sum.
    ``mi_latent`` is the plain sum of the six latent-pair CLUB values (MIM
    mode only, NaN otherwise)."""
    if bundle is None:
        bundle = model.encode(batch)
    if inputs is None:
        inputs = pooled_inputs(batch, model.dims["vocab"])
    latents = bundle.as_dict()
    lab = np.flatnonzero(batch.labeled)
    preds = model.predict(bundle.take(lab))
    l_reg = regression_loss(preds, batch.labels[lab], cfg.loss_guard)
    l_recon = recon_loss(model.reconstruct(bundle, batch), batch.seqs(), cfg.loss_guard) \
        if cfg.use_recon else Tensor(0.0)
    mi_latent = math.nan
    if cfg.mode == "mim":
        terms = mim_terms(latents, inputs, model.estimators, cfg.mim_inputs)
        vals = list(terms.values())
        l_mim = vals[0]
        for t in vals[1:]:
            l_mim = l_mim + t
        mi_latent = float(sum(terms[pair_name(p)].data for p in LATENT_PAIRS))
    elif cfg.mode == "oc":
        l_mim = oc_loss(latents)
    else:
        l_mim = Tensor(0.0)
    return {"l_reg": l_reg, "l_recon": l_recon, "l_mim": l_mim, "mi_latent": mi_latent,
            "loss": total_loss(l_reg, l_recon, l_mim, cfg.alpha)}


class Trainer:
    """Holds the model, both optimizers and the sampling state."""

    def __init__(self, cfg: TrainConfig, labeled: Dataset, unlabeled: Dataset | None = None,
                 val: Dataset | None = None):
        cfg.validate()
        if not labeled.labeled:
            raise ValueError("training set must be fully labeled")
        if len(labeled) < cfg.batch_size:
            raise ValueError(f"training set has {len(labeled)} samples, fewer than batch_size")
        self.cfg = cfg
        self.labeled, self.val = labeled, val
        self.unlabeled = unlabeled if (unlabeled is not None and len(unlabeled) and cfg.n_unlabeled) else None
        self.trace = TrainTrace()
        if self.unlabeled is not None:
            n = sum(s.label is not None for s in self.unlabeled.samples)
            if n:
                self.trace.warnings.append(f"{n} unlabeled samples carry labels; labels ignored")
            if len(self.unlabeled) < cfg.n_unlabeled:
                raise ValueError(f"unlabeled set has {len(self.unlabeled)} samples, "
                                 f"fewer than the {cfg.n_unlabeled} needed per batch")
        self.model = MIRD(cfg, labeled.d_v, labeled.d_a, labeled.vocab)
        self.theta = [p for _, p in self.model.theta()]
        self.theta_var = [p for _, p in self.model.theta_var()]
        self.opt = AdamW(self.theta, lr=cfg.lr_main, weight_decay=cfg.weight_decay)
        self.opt_var = Adam(self.theta_var, lr=cfg.lr_mi)
        self.order_rng = np.random.default_rng([cfg.seed, 1])
        self._u_perm = np.empty(0, dtype=np.int64)

    def _draw_unlabeled(self) -> np.ndarray:
        n = self.cfg.n_unlabeled
        if self.unlabeled is None:
            return np.empty(0, dtype=np.int64)
        if self._u_perm.size < n:
            self._u_perm = np.concatenate([self._u_perm, self.order_rng.permutation(len(self.unlabeled))])
        out, self._u_perm = self._u_perm[:n], self._u_perm[n:]
        return out

    def step(self, batch: Batch) -> dict[str, float]:
        """One outer iteration on a combined batch."""
        cfg, model = self.cfg, self.model
        bundle = model.encode(batch)
        latents = bundle.as_dict()
        inputs = pooled_inputs(batch, model.dims["vocab"])
        var_updates = 0
        if cfg.mode == "mim":
            detached = {k: z.detach() for k, z in latents.items()}
            for _ in range(cfg.inner_steps):
                self.opt_var.zero_grad()
                lld = lld_loss(detached, inputs, model.estimators, cfg.mim_inputs)
                lld.backward()
                self.opt_var.step()
                var_updates += 1
        out = compute_losses(model, cfg, batch, bundle, inputs)
        loss = out["loss"]
        self.opt.zero_grad()
        loss.backward()
        self.opt.step(max_norm=cfg.grad_clip)
        self.trace.updates.append((var_updates, 1))
        return {"l_reg": out["l_reg"].item(), "l_recon": out["l_recon"].item(),
                "l_mim": out["l_mim"].item(), "mi_latent": out["mi_latent"], "loss": loss.item()}

    def epoch(self, epoch: int) -> EpochRecord:
        cfg = self.cfg
        perm = self.order_rng.permutation(len(self.labeled))
        stats = []
        for start in range(0, len(perm), cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            if len(idx) < 2:
                continue
            batch = _combined(self.labeled, idx, self.unlabeled, self._draw_unlabeled())
            stats.append(self.step(batch))
        avg = {k: float(np.mean([s[k] for s in stats])) for k in stats[0]}
        val = evaluate(self.model, self.val)[1] if self.val is not None and self.val.labeled else None
        rec = EpochRecord(epoch, avg["l_reg"], avg["l_recon"], avg["l_mim"], val,
                          avg["mi_latent"], avg["loss"])
        self.trace.records.append(rec)
        return rec

    def fit(self, progress=None) -> tuple[MIRD, TrainTrace]:
        for e in range(1, self.cfg.epochs + 1):
            rec = self.epoch(e)
            if progress is not None:
                progress(rec)
        return self.model, self.trace


def run_training(cfg: TrainConfig, labeled: Dataset, unlabeled: Dataset | None = None,
                 mode: str | None = None, val: Dataset | None = None,
                 progress=None) -> tuple[MIRD, TrainTrace]:
    if mode is not None:
        cfg = TrainConfig(**{**cfg.as_dict(), "mode": mode})
    return Trainer(cfg, labeled, unlabeled, val).fit(progress)
