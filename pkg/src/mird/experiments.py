"""Comparative runs on the synthetic benchmark: ablation grid, constraint
modes, MI traces, held-out MI and factor probes."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from mird.data import SyntheticData
from mird.metrics import FACTOR_KEYS, LATENT_KEYS, MetricsReport, ProbeReport, probe_factors
from mird.mi import GaussianConditional, club_estimate, nll_loss
from mird.optim import Adam
from mird.tensor import no_grad
from mird.trainer import MIRD, TrainConfig, TrainTrace, encode_dataset, evaluate, run_training

# name -> overrides applied on top of the base config; each row after the
# first drops one more ingredient
ABLATION_GRID: dict[str, dict] = {
    "mim+unlabeled": {"mode": "mim"},
    "mim": {"mode": "mim", "split_rate": 0.0},
    "mim-input_terms": {"mode": "mim", "split_rate": 0.0, "mim_inputs": False},
    "nc": {"mode": "nc", "split_rate": 0.0, "alpha": 0.0},
    "no_recon": {"mode": "nc", "split_rate": 0.0, "alpha": 0.0, "use_recon": False},
}


@dataclass
class RunResult:
    name: str
    cfg: TrainConfig
    trace: TrainTrace
    test: MetricsReport
    probe: ProbeReport
    heldout_mi: dict[str, float]
    model: MIRD | None = field(default=None, repr=False)


def heldout_mi(x: np.ndarray, y: np.ndarray, seed: int = 0, max_steps: int = 600,
               lr: float = 3e-3, check_every: int = 10) -> float:
    """CLUB estimate of I(x; y) from a freshly fitted conditional q(y|x).

    Rows split 50/25/25 into fit, selection and estimation parts. q is fit
    on the first part, the weights with the lowest selection NLL are kept
    (an overconfident q inflates CLUB without bound), and the estimate is
    taken on the last part. Both sides are standardized with fit-part
    statistics; MI is invariant to per-dimension affine maps.
    """
    n = x.shape[0]
    n_fit, n_sel = n // 2, n // 4
    if n_fit < 2 or n - n_fit - n_sel < 2:
        raise ValueError(f"heldout_mi: {n} rows are too few")

    def standardize(a):
        mu, sd = a[:n_fit].mean(axis=0), a[:n_fit].std(axis=0)
        return (a - mu) / np.where(sd > 0, sd, 1.0)

    x, y = standardize(x), standardize(y)
    fit, sel, est = slice(0, n_fit), slice(n_fit, n_fit + n_sel), slice(n_fit + n_sel, n)
    q = GaussianConditional(np.random.default_rng(seed), x.shape[1], y.shape[1])
    params = q.parameters()
    opt = Adam(params, lr=lr)
    best, best_w = np.inf, [p.data.copy() for p in params]
    for step in range(1, max_steps + 1):
        opt.zero_grad()
        nll_loss(q, x[fit], y[fit]).backward()
        opt.step()
        if step % check_every == 0:
            with no_grad():
                sel_nll = nll_loss(q, x[sel], y[sel]).item()
            if sel_nll < best:
                best, best_w = sel_nll, [p.data.copy() for p in params]
    for p, w in zip(params, best_w):
        p.data = w
    with no_grad():
        return club_estimate(q, x[est], y[est]).item()


def assess(name: str, cfg: TrainConfig, model: MIRD, trace: TrainTrace,
           data: SyntheticData, keep_model: bool = False) -> RunResult:
    """Test metrics, factor probes and held-out MI between z^S and each z^m,
    all on the test split. Probes are NaN when the split has no factors."""
    test = evaluate(model, data.test)[1]
    z = encode_dataset(model, data.test)
    try:
        probe = probe_factors(z, data.test.factors())
    except ValueError:
        probe = ProbeReport(np.full((len(LATENT_KEYS), len(FACTOR_KEYS)), np.nan))
    mi = {m: heldout_mi(z[m], z["s"], seed=cfg.seed) for m in ("v", "l", "a")}
    return RunResult(name, cfg, trace, test, probe, mi, model if keep_model else None)


def run_cell(name: str, base: TrainConfig, data: SyntheticData, overrides: dict,
             keep_model: bool = False) -> RunResult:
    cfg = replace(base, **overrides)
    model, trace = run_training(cfg, data.train, data.unlabeled, val=data.val)
    return assess(name, cfg, model, trace, data, keep_model)


def ablation(base: TrainConfig, data: SyntheticData, cells=None) -> list[RunResult]:
    names = list(ABLATION_GRID) if cells is None else list(cells)
    return [run_cell(n, base, data, ABLATION_GRID[n]) for n in names]


def mi_traces(base: TrainConfig, data: SyntheticData) -> dict[float, np.ndarray]:
    """Per-epoch sum of the six latent-pair CLUB estimates (batch-averaged)
    for split rate 0 and the configured split rate."""
    out = {}
    for rate in (0.0, base.split_rate):
        cfg = replace(base, mode="mim", split_rate=rate)
        _, trace = run_training(cfg, data.train, data.unlabeled, val=data.val)
        out[rate] = trace.mi_series()
    return out


def table_row(res: RunResult) -> dict:
    row = {"cell": res.name, "seed": res.cfg.seed, "acc": res.test.acc, "f1": res.test.f1,
           "mae": res.test.mae, "corr": res.test.corr}
    row.update({f"mi_s_{m}": v for m, v in res.heldout_mi.items()})
    row.update(res.probe.as_dict())
    return row
