"""Command-line entry point: ``mird {train,eval,ablate,mi-trace}``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from mird import __version__
from mird.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from mird.config import ConfigError, RunConfig, load_config
from mird.data import (Dataset, DatasetFormatError, SyntheticData, fingerprint, generate,
                       load_dataset, save_dataset)
from mird.experiments import ABLATION_GRID, mi_traces, run_cell, table_row
from mird.trainer import MODES, evaluate, run_training

TRACE_FILE = "trace.csv"
CHECKPOINT_FILE = "model.ckpt"
MANIFEST_FILE = "manifest.json"
METRICS_FILE = "metrics.json"
ABLATION_FILE = "ablation.csv"


class UsageError(Exception):
    pass


class RunError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# -- config and data -----------------------------------------------------------

def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {"mode": args.mode, "split_rate": args.split_rate, "alpha": args.alpha, "seed": args.seed}
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg.train, key, value)
    try:
        cfg.train.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def prepare_data(cfg: RunConfig, out: Path) -> tuple[SyntheticData, dict[str, str]]:
    """Load the configured splits, or generate the synthetic benchmark and
    write its splits under ``out/data``. Returns the splits and a path map."""
    if cfg.uses_synthetic:
        data = generate(cfg.spec())
        paths = {}
        for name, ds in data.splits().items():
            p = out / "data" / f"{name}.jsonl"
            save_dataset(ds, p)
            paths[name] = str(p)
        return data, paths
    for key, p in cfg.data.items():
        if not Path(p).is_file():
            raise UsageError(f"[data] {key}: no such file {p}")
    loaded = {k: load_dataset(p) for k, p in cfg.data.items()}
    train = loaded["train"]
    empty = Dataset([], train.d_v, train.d_a, train.vocab)
    val = loaded.get("val")
    data = SyntheticData(train, val if val is not None else empty,
                         loaded.get("test", val if val is not None else train),
                         loaded.get("unlabeled", empty))
    return data, dict(cfg.data)


def fingerprints(paths: dict[str, str]) -> dict[str, str]:
    return {k: fingerprint(p) for k, p in sorted(paths.items())}


def check_drift(out: Path, prints: dict[str, str], force: bool) -> None:
    path = out / MANIFEST_FILE
    if not path.exists():
        return
    try:
        old = json.loads(path.read_text(encoding="utf-8")).get("fingerprints", {})
    except json.JSONDecodeError:
        old = {}
    changed = sorted(k for k in set(old) | set(prints) if old.get(k) != prints.get(k))
    if changed and not force:
        raise RunError(f"dataset fingerprint mismatch against {path} for {', '.join(changed)}; "
                       "rerun with --force to overwrite")
    if changed:
        print(f"warning: dataset fingerprints changed for {', '.join(changed)}; continuing (--force)",
              file=sys.stderr)


# -- commands ------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data, paths = prepare_data(cfg, out)
    prints = fingerprints(paths)
    check_drift(out, prints, args.force)
    val = data.val if len(data.val) and data.val.labeled else None
    manifest = {
        "version": __version__,
        "command": "train",
        "mode": cfg.train.mode,
        "seed": cfg.train.seed,
        "config": cfg.snapshot(),
        "datasets": paths,
        "fingerprints": prints,
        "metrics_split": "val" if val is not None else "train",
        "outputs": {"checkpoint": CHECKPOINT_FILE, "trace": TRACE_FILE,
                    "metrics": METRICS_FILE, "manifest": MANIFEST_FILE},
    }
    _write_atomic(out / MANIFEST_FILE, _json(manifest))

    def progress(rec):
        if not args.quiet:
            print(f"epoch {rec.epoch}: l_reg={rec.l_reg:.4f} l_recon={rec.l_recon:.4f} "
                  f"l_mim={rec.l_mim:.4f}", file=sys.stderr)

    model, trace = run_training(cfg.train, data.train, data.unlabeled, val=val, progress=progress)
    for w in trace.warnings:
        print(f"warning: {w}", file=sys.stderr)
    _write_atomic(out / TRACE_FILE, trace.to_csv())
    save_checkpoint(out / CHECKPOINT_FILE, model, cfg.train)
    report = evaluate(model, val if val is not None else data.train)[1]
    _write_atomic(out / METRICS_FILE, report.to_json() + "\n")
    print(report.to_json())
    return 0


def cmd_eval(args) -> int:
    try:
        model, _ = load_checkpoint(args.checkpoint)
    except FileNotFoundError:
        raise UsageError(f"no such checkpoint {args.checkpoint}") from None
    if not Path(args.data).is_file():
        raise UsageError(f"no such dataset {args.data}")
    ds = load_dataset(args.data)
    dims = model.dims
    got = {"v": ds.d_v, "a": ds.d_a, "vocab": ds.vocab}
    bad = [f"{k}: checkpoint {dims[k]}, dataset {got[k]}" for k in ("v", "a", "vocab") if dims[k] != got[k]]
    if bad:
        raise RunError("dataset does not match the checkpoint (" + "; ".join(bad) + ")")
    if not ds.labeled:
        raise RunError(f"{args.data} has unlabeled samples; evaluation needs labels")
    report = evaluate(model, ds)[1]
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_atomic(out / METRICS_FILE, report.to_json() + "\n")
    print(report.to_json())
    return 0


def _cell_worker(job):
    name, base, data = job
    return table_row(run_cell(name, base, data, ABLATION_GRID[name]))


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data, paths = prepare_data(cfg, out)
    prints = fingerprints(paths)
    check_drift(out, prints, args.force)
    _write_atomic(out / MANIFEST_FILE, _json({
        "version": __version__, "command": "ablate", "mode": "grid", "seed": cfg.train.seed,
        "config": cfg.snapshot(), "datasets": paths, "fingerprints": prints,
        "outputs": {"table": ABLATION_FILE, "manifest": MANIFEST_FILE}}))
    jobs = [(name, cfg.train, data) for name in ABLATION_GRID]
    if args.parallel:
        with ProcessPoolExecutor(max_workers=len(jobs)) as pool:
            rows = list(pool.map(_cell_worker, jobs))
    else:
        rows = []
        for job in jobs:
            if not args.quiet:
                print(f"cell {job[0]}", file=sys.stderr)
            rows.append(_cell_worker(job))
    data_print = prints.get("train", "")
    for row in rows:
        row["data_fingerprint"] = data_print
    cols = list(rows[0])
    tmp = out / (ABLATION_FILE + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    os.replace(tmp, out / ABLATION_FILE)
    print((out / ABLATION_FILE).read_text(encoding="utf-8"), end="")
    return 0


def _rate_tag(rate: float) -> str:
    return f"{rate:g}".replace(".", "p")


def cmd_mi_trace(args) -> int:
    cfg = resolve_config(args)
    rate = cfg.train.split_rate
    if rate <= 0:
        raise UsageError("mi-trace compares split rate 0 with the configured rate, which must be > 0")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data, paths = prepare_data(cfg, out)
    prints = fingerprints(paths)
    check_drift(out, prints, args.force)
    files = {0.0: f"mi_trace_split{_rate_tag(0.0)}.csv", rate: f"mi_trace_split{_rate_tag(rate)}.csv"}
    _write_atomic(out / MANIFEST_FILE, _json({
        "version": __version__, "command": "mi-trace", "mode": "mim", "seed": cfg.train.seed,
        "config": cfg.snapshot(), "datasets": paths, "fingerprints": prints,
        "outputs": {"traces": list(files.values()), "manifest": MANIFEST_FILE}}))
    traces = mi_traces(cfg.train, data)
    for r, series in traces.items():
        lines = ["epoch,mi"] + [f"{e},{float(v)!r}" for e, v in enumerate(series, start=1)]
        _write_atomic(out / files[r], "\n".join(lines) + "\n")
        print(out / files[r])
    return 0


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mird", description="Train and compare MIRD models.")
    parser.add_argument("--version", action="version", version=f"mird {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def run_flags(p, out_required=True):
        p.add_argument("--config", help="INI run configuration (default: synthetic desk profile)")
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--mode", choices=MODES)
        p.add_argument("--split-rate", type=float, dest="split_rate")
        p.add_argument("--alpha", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--force", action="store_true", help="proceed despite dataset fingerprint drift")
        p.add_argument("--quiet", action="store_true", help="no per-epoch progress on stderr")

    p = sub.add_parser("train", help="train one model")
    run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a labeled dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--out", help="also write metrics.json here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the ablation grid")
    run_flags(p)
    p.add_argument("--parallel", action="store_true", help="run cells in separate processes")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("mi-trace", help="MI traces at split rate 0 and the configured rate")
    run_flags(p)
    p.set_defaults(func=cmd_mi_trace)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"mird: error: {exc}", file=sys.stderr)
        return 1
    except (RunError, CheckpointError, DatasetFormatError, ValueError, OSError) as exc:
        print(f"mird: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
