"""Checkpoint file format.

Layout (little-endian)::

    b"SMCK" | u32 version | u32 metadata length | UTF-8 JSON metadata
    | u32 tensor count
    | per tensor: u32 name length | name | u32 rank | rank * u32 dims | float32 payload
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from stamp_mil.data import FormatError
from stamp_mil.model import ModelConfig

CKPT_MAGIC = b"SMCK"
CKPT_VERSION = 1


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    model_name: str
    model_cfg: ModelConfig
    train_cfg: dict = field(default_factory=dict)
    epoch: int = 0
    metrics: dict = field(default_factory=dict)

    def metadata(self) -> dict:
        return {
            "model": self.model_name,
            "model_config": self.model_cfg.to_dict(),
            "train_config": self.train_cfg,
            "epoch": self.epoch,
            "metrics": self.metrics,
        }


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> Path:
    path = Path(path)
    meta = json.dumps(ckpt.metadata(), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(meta)))
        fh.write(meta)
        fh.write(struct.pack("<I", len(ckpt.tensors)))
        for name, arr in ckpt.tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f4")
            raw_name = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw_name)))
            fh.write(raw_name)
            fh.write(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
            fh.write(arr.tobytes())
    return path


class _Reader:
    def __init__(self, raw: bytes, path: Path):
        self.raw, self.pos, self.path = raw, 0, path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.raw):
            raise FormatError(f"{self.path}: {what}: truncated")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str, count: int = 1):
        vals = struct.unpack(f"<{count}I", self.take(4 * count, what))
        return vals[0] if count == 1 else vals


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    r = _Reader(path.read_bytes(), path)
    magic = r.take(4, "magic")
    if magic != CKPT_MAGIC:
        raise FormatError(f"{path}: magic: expected {CKPT_MAGIC!r}, got {magic!r}")
    version = r.u32("version")
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: version: unsupported checkpoint version {version}")
    try:
        meta = json.loads(r.take(r.u32("metadata length"), "metadata").decode("utf-8"))
        cfg = ModelConfig(**meta["model_config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: metadata: {exc}") from exc
    tensors = {}
    for _ in range(r.u32("tensor count")):
        name = r.take(r.u32("name length"), "tensor name").decode("utf-8")
        rank = r.u32(f"{name} rank")
        dims = r.u32(f"{name} dims", rank) if rank else ()
        dims = (dims,) if isinstance(dims, int) else tuple(dims)
        count = int(np.prod(dims, dtype=np.int64))
        tensors[name] = np.frombuffer(r.take(4 * count, f"{name} payload"), dtype="<f4").reshape(dims).copy()
    if r.pos != len(r.raw):
        raise FormatError(f"{path}: payload: trailing bytes")
    ckpt = Checkpoint(tensors, meta["model"], cfg, meta.get("train_config", {}), meta.get("epoch", 0), meta.get("metrics", {}))
    _check_shapes(ckpt, path)
    return ckpt


def _check_shapes(ckpt: Checkpoint, path: Path) -> None:
    # imported lazily: train imports this module
    from stamp_mil.train import build_model

    try:
        expected = {k: tuple(v.shape) for k, v in build_model(ckpt.model_name, ckpt.model_cfg, 0).state_dict().items()}
    except ValueError as exc:
        raise FormatError(f"{path}: metadata: {exc}") from exc
    got = {k: tuple(v.shape) for k, v in ckpt.tensors.items()}
    if set(expected) != set(got):
        missing, extra = sorted(set(expected) - set(got)), sorted(set(got) - set(expected))
        raise FormatError(f"{path}: tensors: do not match model config (missing {missing}, unexpected {extra})")
    for k, shape in expected.items():
        if got[k] != shape:
            raise FormatError(f"{path}: {k}: shape {got[k]} does not match config-implied {shape}")
