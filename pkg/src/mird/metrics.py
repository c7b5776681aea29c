"""Sentiment regression metrics and linear factor probes."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np


@dataclass
class MetricsReport:
    acc: float
    f1: float
    mae: float
    corr: float
    corr_error: str | None = None

    def to_json(self) -> str:
        d = {"acc": self.acc, "f1": self.f1, "mae": self.mae, "corr": self.corr}
        if self.corr_error:
            d["corr_error"] = self.corr_error
        return json.dumps(d)

    def as_dict(self) -> dict:
        return asdict(self)


def _binary_f1(truth: np.ndarray, pred: np.ndarray, positive: bool) -> float:
    t, p = truth == positive, pred == positive
    tp = float(np.sum(t & p))
    denom = float(np.sum(t) + np.sum(p))
    return 2.0 * tp / denom if denom else 0.0


def weighted_f1(truth: np.ndarray, pred: np.ndarray) -> float:
    """Per-class F1 averaged with weights proportional to class support."""
    n = truth.size
    total = 0.0
    for cls in (False, True):
        support = int(np.sum(truth == cls))
        if support:
            total += support / n * _binary_f1(truth, pred, cls)
    return total


def compute_metrics(preds, labels) -> MetricsReport:
    """Binary accuracy and weighted F1 (percent) on the sign of predictions
    versus labels, skipping exact-zero labels; MAE and Pearson correlation on
    all samples."""
    preds = np.asarray(preds, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    if preds.shape != labels.shape:
        raise ValueError(f"compute_metrics: {preds.size} predictions for {labels.size} labels")
    if preds.size < 2:
        raise ValueError("compute_metrics: need at least 2 samples")
    nz = labels != 0
    truth = labels[nz] > 0
    guess = preds[nz] > 0
    acc = 100.0 * float(np.mean(truth == guess)) if truth.size else float("nan")
    f1 = 100.0 * weighted_f1(truth, guess) if truth.size else float("nan")
    mae = float(np.mean(np.abs(preds - labels)))
    dp, dl = preds - preds.mean(), labels - labels.mean()
    sll, spp = float(dl @ dl), float(dp @ dp)
    corr_error = None
    if sll == 0.0:
        corr, corr_error = float("nan"), "labels are constant; correlation undefined"
    elif spp == 0.0:
        corr, corr_error = float("nan"), "predictions are constant; correlation undefined"
    else:
        corr = float(np.clip(float(dp @ dl) / np.sqrt(spp * sll), -1.0, 1.0))
    return MetricsReport(acc, f1, mae, corr, corr_error)


# -- probes --------------------------------------------------------------------

LATENT_KEYS = ("v", "l", "a", "s")
FACTOR_KEYS = ("shared", "v", "l", "a")


def ridge_r2(x: np.ndarray, y: np.ndarray, ridge: float = 1.0, fit_frac: float = 0.5) -> float:
    """Held-out R^2 of a ridge regression from ``x`` to ``y``.

    The first ``fit_frac`` of rows fit the probe (after standardizing on
    those rows); the rest score it. Multi-output targets average R^2 over
    columns.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    n_fit = int(round(fit_frac * x.shape[0]))
    if n_fit < x.shape[1] or x.shape[0] - n_fit < 2:
        raise ValueError(f"probe: {x.shape[0]} samples are too few for a {x.shape[1]}-dim latent")
    xf, xt = x[:n_fit], x[n_fit:]
    yf, yt = y[:n_fit], y[n_fit:]
    mu, sd = xf.mean(axis=0), xf.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    xf, xt = (xf - mu) / sd, (xt - mu) / sd
    y_mu = yf.mean(axis=0)
    w = np.linalg.solve(xf.T @ xf + ridge * np.eye(x.shape[1]), xf.T @ (yf - y_mu))
    resid = yt - (xt @ w + y_mu)
    ss_res = (resid ** 2).sum(axis=0)
    ss_tot = ((yt - yt.mean(axis=0)) ** 2).sum(axis=0)
    return float(np.mean(1.0 - ss_res / np.where(ss_tot > 0, ss_tot, 1.0)))


@dataclass
class ProbeReport:
    r2: np.ndarray  # rows: LATENT_KEYS, columns: FACTOR_KEYS

    def get(self, latent: str, factor: str) -> float:
        return float(self.r2[LATENT_KEYS.index(latent), FACTOR_KEYS.index(factor)])

    def as_dict(self) -> dict[str, float]:
        return {f"r2_{lat}_{fac}": self.get(lat, fac) for lat in LATENT_KEYS for fac in FACTOR_KEYS}


def probe_factors(latents: dict[str, np.ndarray], factors: dict[str, np.ndarray],
                  ridge: float = 1.0) -> ProbeReport:
    n = {k: np.asarray(latents[k]).shape[0] for k in LATENT_KEYS}
    n.update({f"f:{k}": np.asarray(factors[k]).shape[0] for k in FACTOR_KEYS})
    if len(set(n.values())) != 1:
        raise ValueError(f"probe: latents and factors are not aligned ({n})")
    r2 = np.array([[ridge_r2(latents[lat], factors[fac], ridge) for fac in FACTOR_KEYS]
                   for lat in LATENT_KEYS])
    return ProbeReport(r2)
