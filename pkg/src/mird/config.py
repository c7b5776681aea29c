"""Run configuration files.

An INI file with up to three sections:

    [train]      any TrainConfig field (alpha, lr_main, epochs, mode, seed, ...)
    [data]       train / val / test / unlabeled dataset paths; omit to use
                 the synthetic benchmark
    [synthetic]  SyntheticSpec fields (n_train, noise, ...), except seed

Unknown sections and keys are errors. The single seed lives in [train] and
also seeds the synthetic generator. Missing [train] keys take the desk
profile values.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from mird.data import SyntheticSpec
from mird.trainer import TrainConfig, desk_profile

DATA_KEYS = ("train", "val", "test", "unlabeled")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=desk_profile)
    data: dict[str, str] = field(default_factory=dict)
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)

    @property
    def uses_synthetic(self) -> bool:
        return not self.data

    def spec(self) -> SyntheticSpec:
        return dataclasses.replace(self.synthetic, seed=self.train.seed)

    def snapshot(self) -> dict:
        snap = {"train": self.train.as_dict(), "data": dict(self.data)}
        if self.uses_synthetic:
            snap["synthetic"] = dataclasses.asdict(self.spec())
        return snap


def _coerce(section: str, key: str, raw: str, current):
    try:
        if isinstance(current, bool):
            return {"true": True, "false": False, "1": True, "0": False,
                    "yes": True, "no": False}[raw.strip().lower()]
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            lo, hi = (int(x) for x in raw.replace(",", " ").split())
            return (lo, hi)
    except (KeyError, ValueError):
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} "
                          f"as {type(current).__name__}") from None
    return raw.strip()


def _apply(obj, section: str, items) -> None:
    names = {f.name for f in dataclasses.fields(obj)}
    for key, raw in items:
        if key not in names or (section == "synthetic" and key == "seed"):
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        setattr(obj, key, _coerce(section, key, raw, getattr(obj, key)))


def parse_config(text: str, base_dir: Path | None = None) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keys are case-sensitive field names
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    cfg = RunConfig()
    for section in cp.sections():
        items = cp.items(section)
        if section == "train":
            _apply(cfg.train, section, items)
        elif section == "synthetic":
            _apply(cfg.synthetic, section, items)
        elif section == "data":
            for key, raw in items:
                if key not in DATA_KEYS:
                    raise ConfigError(f"unknown key {key!r} in [data]")
                p = Path(raw.strip())
                cfg.data[key] = str(p if p.is_absolute() or base_dir is None else base_dir / p)
        else:
            raise ConfigError(f"unknown section [{section}]")
    if cfg.data and "train" not in cfg.data:
        raise ConfigError("[data] needs a train path")
    try:
        cfg.train.validate()
        cfg.spec().validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), path.parent)
