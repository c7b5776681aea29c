"""Binary checkpoints for a trained MIRD model.

Layout (little-endian):

    b"MIRD" | u32 version | u32 meta_len | meta JSON (config and input dims)
    then for each parameter, in declaration order:
    u32 name_len | name utf-8 | u32 ndim | u64 x ndim shape | float64 data
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from mird.trainer import MIRD, TrainConfig

MAGIC = b"MIRD"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model: MIRD, cfg: TrainConfig) -> None:
    meta = json.dumps({"config": cfg.as_dict(), "dims": model.dims}, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(meta)), meta]
    for name, p in model.named_parameters():
        raw = name.encode()
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<I", p.data.ndim) + struct.pack(f"<{p.data.ndim}Q", *p.data.shape))
        parts.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(parts))
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[MIRD, TrainConfig]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a MIRD checkpoint")
    try:
        version, meta_len = struct.unpack_from("<II", buf, 4)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        pos = 12
        meta = json.loads(buf[pos:pos + meta_len])
        pos += meta_len
        cfg = TrainConfig(**meta["config"])
        dims = meta["dims"]
        model = MIRD(cfg, dims["v"], dims["a"], dims["vocab"])
        for name, p in model.named_parameters():
            (n,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            got = buf[pos:pos + n].decode()
            pos += n
            if got != name:
                raise CheckpointError(f"{path}: expected parameter {name}, found {got}")
            (ndim,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
            pos += 8 * ndim
            if tuple(shape) != p.data.shape:
                raise CheckpointError(f"{path}: {name} has shape {tuple(shape)}, model expects {p.data.shape}")
            size = int(np.prod(shape)) * 8
            if pos + size > len(buf):
                raise CheckpointError(f"{path}: truncated at {name}")
            p.data = np.frombuffer(buf, dtype="<f8", count=size // 8, offset=pos).reshape(shape).astype(np.float64)
            pos += size
    except (struct.error, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from exc
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    return model, cfg
