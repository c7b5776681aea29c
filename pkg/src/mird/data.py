"""Synthetic multimodal benchmark with known factors, plus the JSONL dataset format.

Every sample draws an independent shared factor and one private factor per
modality. Each modality observes its own private factor mixed with its own
noisy copy of the shared factor, and the label is a linear read-out of the shared factor alone, so a
well-disentangled model should route the shared factor through z^S and each
private factor through its own z^m.

File format: the first line is a header object
``{"format": "mird-jsonl", "version": 1, "d_v": .., "d_a": .., "vocab": ..}``;
each further line is one record with ``id``, optional ``label``, and the
arrays ``v`` (T_v x d_v), ``l`` (T_l token ids) and ``a`` (T_a x d_a). An
optional ``factors`` object carries ground truth for probing.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from mird.codecs import MODALITIES, ModalitySequence

FORMAT = "mird-jsonl"
FORMAT_VERSION = 1
FACTOR_KEYS = ("shared", "v", "l", "a")


class DatasetFormatError(ValueError):
    pass


@dataclass
class Sample:
    id: str
    v: np.ndarray
    l: np.ndarray
    a: np.ndarray
    label: float | None = None
    factors: dict[str, np.ndarray] | None = None


@dataclass
class Batch:
    v: ModalitySequence
    l: ModalitySequence
    a: ModalitySequence
    labels: np.ndarray
    labeled: np.ndarray

    @property
    def size(self) -> int:
        return self.labels.shape[0]

    def seqs(self) -> dict[str, ModalitySequence]:
        return {"v": self.v, "l": self.l, "a": self.a}


@dataclass
class Dataset:
    samples: list[Sample]
    d_v: int
    d_a: int
    vocab: int

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def labeled(self) -> bool:
        return bool(self.samples) and all(s.label is not None for s in self.samples)

    def labels(self) -> np.ndarray:
        return np.array([np.nan if s.label is None else s.label for s in self.samples])

    def factors(self) -> dict[str, np.ndarray]:
        if any(s.factors is None for s in self.samples):
            raise ValueError("dataset carries no ground-truth factors")
        return {k: np.stack([s.factors[k] for s in self.samples]) for k in FACTOR_KEYS}

    def batch(self, idx) -> Batch:
        chosen = [self.samples[i] for i in idx]
        return collate(chosen, self.d_v, self.d_a)

    def header(self) -> dict:
        return {"format": FORMAT, "version": FORMAT_VERSION,
                "d_v": self.d_v, "d_a": self.d_a, "vocab": self.vocab}


def _pad(arrs: list[np.ndarray], width: int | None, dtype) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(x) for x in arrs], dtype=np.int64)
    t_max = int(lengths.max())
    shape = (len(arrs), t_max) if width is None else (len(arrs), t_max, width)
    out = np.zeros(shape, dtype=dtype)
    for i, x in enumerate(arrs):
        out[i, :len(x)] = x
    return out, lengths


def collate(samples: list[Sample], d_v: int, d_a: int) -> Batch:
    if not samples:
        raise ValueError("cannot collate an empty batch")
    v, lv = _pad([s.v for s in samples], d_v, np.float64)
    l, ll = _pad([s.l for s in samples], None, np.int64)
    a, la = _pad([s.a for s in samples], d_a, np.float64)
    labeled = np.array([s.label is not None for s in samples])
    labels = np.array([s.label if s.label is not None else 0.0 for s in samples])
    return Batch(ModalitySequence("v", v, lv), ModalitySequence("l", l, ll),
                 ModalitySequence("a", a, la), labels, labeled)


def pooled_inputs(batch: Batch, vocab: int) -> dict[str, np.ndarray]:
    """Fixed-width summaries of the raw inputs: masked time-means for v and a,
    normalized token histograms for l."""
    out = {}
    for m in ("v", "a"):
        seq = batch.seqs()[m]
        mask = seq.mask[..., None]
        out[m] = (seq.features * mask).sum(axis=1) / seq.lengths[:, None]
    seq = batch.l
    hist = np.zeros((seq.batch_size, vocab))
    rows = np.repeat(np.arange(seq.batch_size), seq.features.shape[1])
    np.add.at(hist, (rows[seq.mask.reshape(-1)], seq.features[seq.mask]), 1.0)
    out["l"] = hist / seq.lengths[:, None]
    return out


# -- generator -----------------------------------------------------------------

@dataclass
class SyntheticSpec:
    n_train: int = 256
    n_val: int = 128
    n_test: int = 1024
    n_unlabeled: int = 768
    len_v: tuple[int, int] = (4, 10)
    len_l: tuple[int, int] = (4, 10)
    len_a: tuple[int, int] = (4, 10)
    d_v: int = 8
    d_a: int = 6
    vocab: int = 64
    shared_dim: int = 4
    private_dim: int = 4
    noise: float = 0.1
    shared_noise: float = 0.5
    lang_scale: float = 1.5
    label_scale: float = 1.5
    seed: int = 0

    def validate(self) -> None:
        for name in ("n_train", "n_val", "n_test", "d_v", "d_a", "vocab", "shared_dim", "private_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"SyntheticSpec.{name} must be positive")
        if self.n_unlabeled < 0:
            raise ValueError("SyntheticSpec.n_unlabeled must be non-negative")
        for name in ("len_v", "len_l", "len_a"):
            lo, hi = getattr(self, name)
            if not 1 <= lo <= hi:
                raise ValueError(f"SyntheticSpec.{name} must satisfy 1 <= lo <= hi")
        if self.noise < 0 or self.shared_noise < 0:
            raise ValueError("SyntheticSpec noise scales must be non-negative")


@dataclass
class SyntheticData:
    train: Dataset
    val: Dataset
    test: Dataset
    unlabeled: Dataset
    label_weights: np.ndarray | None = field(default=None, repr=False)

    def splits(self) -> dict[str, Dataset]:
        return {"train": self.train, "val": self.val, "test": self.test, "unlabeled": self.unlabeled}


def generate(spec: SyntheticSpec) -> SyntheticData:
    """Draw every split from one process seeded by ``spec.seed``."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    ks, kp = spec.shared_dim, spec.private_dim
    dims = {"v": spec.d_v, "a": spec.d_a}
    # fixed mixing maps; shared and private enter with comparable weight
    mix = {m: (rng.normal(size=(ks, dims[m])) / np.sqrt(ks),
               rng.normal(size=(kp, dims[m])) / np.sqrt(kp),
               rng.normal(size=(2, dims[m])) * 0.3) for m in dims}
    lang_shared = rng.normal(size=(ks, spec.vocab)) * spec.lang_scale / np.sqrt(ks)
    lang_private = rng.normal(size=(kp, spec.vocab)) * spec.lang_scale / np.sqrt(kp)
    lang_pos = rng.normal(size=(2, spec.vocab)) * 0.3
    w_label = rng.normal(size=ks)
    w_label /= np.linalg.norm(w_label)
    lens = {"v": spec.len_v, "l": spec.len_l, "a": spec.len_a}

    def clock(n: int) -> np.ndarray:
        t = np.arange(n)
        return np.stack([np.sin(0.7 * t), np.cos(0.7 * t)], axis=1)

    def draw(n: int, prefix: str, with_label: bool) -> Dataset:
        out = []
        for i in range(n):
            s = rng.normal(size=ks)
            priv = {m: rng.normal(size=kp) for m in MODALITIES}
            # each modality sees its own corrupted copy of the shared factor
            seen = {m: s + spec.shared_noise * rng.normal(size=ks) for m in MODALITIES}
            seq = {}
            for m in ("v", "a"):
                t_m = int(rng.integers(lens[m][0], lens[m][1] + 1))
                A, B, C = mix[m]
                base = seen[m] @ A + priv[m] @ B
                seq[m] = np.tanh(base[None, :] + clock(t_m) @ C) \
                    + spec.noise * rng.normal(size=(t_m, dims[m]))
            t_l = int(rng.integers(lens["l"][0], lens["l"][1] + 1))
            logits = (seen["l"] @ lang_shared + priv["l"] @ lang_private)[None, :] + clock(t_l) @ lang_pos
            p = np.exp(logits - logits.max(axis=1, keepdims=True))
            p /= p.sum(axis=1, keepdims=True)
            tokens = np.array([rng.choice(spec.vocab, p=row) for row in p], dtype=np.int64)
            label = None
            if with_label:
                label = float(spec.label_scale * (s @ w_label) + spec.noise * rng.normal())
            factors = {"shared": s, "v": priv["v"], "l": priv["l"], "a": priv["a"]}
            out.append(Sample(f"{prefix}-{i:05d}", seq["v"], tokens, seq["a"], label, factors))
        return Dataset(out, spec.d_v, spec.d_a, spec.vocab)

    train = draw(spec.n_train, "train", True)
    val = draw(spec.n_val, "val", True)
    test = draw(spec.n_test, "test", True)
    unlabeled = draw(spec.n_unlabeled, "unl", False)
    return SyntheticData(train, val, test, unlabeled, w_label)


# -- file format ---------------------------------------------------------------

def _record(s: Sample) -> dict:
    rec: dict = {"id": s.id}
    if s.label is not None:
        rec["label"] = s.label
    rec["v"] = s.v.tolist()
    rec["l"] = s.l.tolist()
    rec["a"] = s.a.tolist()
    if s.factors is not None:
        rec["factors"] = {k: np.asarray(v).tolist() for k, v in s.factors.items()}
    return rec


def save_dataset(ds: Dataset, path: str | os.PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(ds.header()) + "\n")
        for s in ds.samples:
            fh.write(json.dumps(_record(s)) + "\n")
    os.replace(tmp, path)


def _matrix(rec: dict, key: str, width: int, lineno: int) -> np.ndarray:
    try:
        arr = np.asarray(rec[key], dtype=np.float64)
    except KeyError:
        raise DatasetFormatError(f"line {lineno}: missing field {key!r}") from None
    except (TypeError, ValueError):
        raise DatasetFormatError(f"line {lineno}: field {key!r} is not a numeric matrix") from None
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise DatasetFormatError(f"line {lineno}: field {key!r} must be a non-empty T x d matrix")
    if arr.shape[1] != width:
        raise DatasetFormatError(f"line {lineno}: field {key!r} has width {arr.shape[1]}, "
                                 f"header says {width}")
    return arr


def load_dataset(path: str | os.PathLike) -> Dataset:
    """Parse a dataset file; any malformed line aborts the whole load."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DatasetFormatError("line 1: missing header")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"line 1: malformed header ({e.msg})") from None
    if not isinstance(header, dict) or header.get("format") != FORMAT:
        raise DatasetFormatError(f"line 1: not a {FORMAT} header")
    if header.get("version") != FORMAT_VERSION:
        raise DatasetFormatError(f"line 1: unsupported version {header.get('version')!r}")
    try:
        d_v, d_a, vocab = int(header["d_v"]), int(header["d_a"]), int(header["vocab"])
    except (KeyError, TypeError, ValueError):
        raise DatasetFormatError("line 1: header must give integer d_v, d_a, vocab") from None
    samples = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise DatasetFormatError(f"line {lineno}: malformed record ({e.msg})") from None
        if not isinstance(rec, dict) or "id" not in rec:
            raise DatasetFormatError(f"line {lineno}: record needs an 'id'")
        v = _matrix(rec, "v", d_v, lineno)
        a = _matrix(rec, "a", d_a, lineno)
        try:
            l_raw = np.asarray(rec["l"])
        except KeyError:
            raise DatasetFormatError(f"line {lineno}: missing field 'l'") from None
        if l_raw.ndim != 1 or l_raw.size == 0 or not np.issubdtype(l_raw.dtype, np.integer):
            raise DatasetFormatError(f"line {lineno}: field 'l' must be a non-empty list of token ids")
        if l_raw.min() < 0 or l_raw.max() >= vocab:
            raise DatasetFormatError(f"line {lineno}: token id outside [0, {vocab})")
        label = rec.get("label")
        if label is not None and not isinstance(label, (int, float)):
            raise DatasetFormatError(f"line {lineno}: label must be a number")
        factors = None
        if "factors" in rec:
            factors = {k: np.asarray(v, dtype=np.float64) for k, v in rec["factors"].items()}
        samples.append(Sample(str(rec["id"]), v, l_raw.astype(np.int64), a,
                              None if label is None else float(label), factors))
    return Dataset(samples, d_v, d_a, vocab)


def fingerprint(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
