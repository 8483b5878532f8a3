"""Checkpoint files.

Layout (little-endian)::

    b"MMCK" | u32 version | u32 entry count |
    count × (u16 name length | UTF-8 name | MMT1 tensor)

Parameters and batch-norm buffers are stored under their dotted module
paths.  Three reserved entries carry the rest of the state as tensors:
``__config__`` (the TrainConfig text, one byte per element),
``__model__`` (architecture facts taken from the dataset, same encoding) and
``__step__`` (the step counter).  Entries are written in sorted name order so
a load followed by a save reproduces the file byte for byte.
"""

from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from ..exceptions import CorruptRecord, InvalidConfig, IoFailure
from ..model import ScaleMoENet
from ..tensor import mmt
from .config import TrainConfig, load_config, parse_config_text

MAGIC = b"MMCK"
VERSION = 1
RESERVED = ("__config__", "__model__", "__step__")


def _text_tensor(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float64)


def _tensor_text(arr: np.ndarray) -> str:
    return arr.astype(np.uint8).tobytes().decode("utf-8")


@dataclass
class Checkpoint:
    config: TrainConfig
    vocab_size: int
    n_types: int
    step: int
    state: dict  # name -> float64 array holding f32-representable values

    def build_model(self) -> ScaleMoENet:
        model = model_from_config(self.config, self.vocab_size, self.n_types)
        model.load_state_dict(self.state)
        return model


def model_from_config(cfg: TrainConfig, vocab_size: int, n_types: int) -> ScaleMoENet:
    return ScaleMoENet(
        vocab_size=vocab_size,
        n_types=n_types,
        channels=cfg.channel_widths,
        embed_dim=cfg.embed_dim,
        n_experts=cfg.n_experts,
        router_hidden=cfg.router_hidden,
        align_level=cfg.align_level,
        seed=cfg.seed,
    )


def snap_to_f32(model: ScaleMoENet) -> None:
    """Round parameters and buffers in place to the precision they are stored at."""
    for p in model.parameters():
        p.data[...] = p.data.astype(np.float32)
    for _, buf in model.named_buffers():
        buf[...] = buf.astype(np.float32)


def encode_entries(entries: dict) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(entries)))
    for name in sorted(entries):
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise InvalidConfig(f"entry name too long: {name[:40]}...")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        mmt.write(buf, entries[name])
    return buf.getvalue()


def decode_entries(data: bytes) -> tuple[int, dict]:
    fh = io.BytesIO(data)
    head = fh.read(12)
    if len(head) != 12 or head[:4] != MAGIC:
        raise CorruptRecord("not an MMCK checkpoint (bad magic or truncated header)")
    version, count = struct.unpack("<II", head[4:])
    if version != VERSION:
        raise CorruptRecord(f"unsupported checkpoint version {version}")
    entries = {}
    for _ in range(count):
        size_raw = fh.read(2)
        if len(size_raw) != 2:
            raise CorruptRecord("truncated checkpoint entry header")
        (size,) = struct.unpack("<H", size_raw)
        name_raw = fh.read(size)
        if len(name_raw) != size:
            raise CorruptRecord("truncated checkpoint entry name")
        name = name_raw.decode("utf-8")
        if name in entries:
            raise CorruptRecord(f"duplicate checkpoint entry {name!r}")
        entries[name] = mmt.read(fh)
    if fh.read(1):
        raise CorruptRecord("trailing bytes after the last checkpoint entry")
    return version, entries


def checkpoint_bytes(model: ScaleMoENet, cfg: TrainConfig, step: int, vocab_size: int, n_types: int) -> bytes:
    entries = dict(model.state_dict())
    clash = set(entries) & set(RESERVED)
    if clash:
        raise InvalidConfig(f"model state uses reserved names {sorted(clash)}")
    entries["__config__"] = _text_tensor(cfg.to_text())
    entries["__model__"] = _text_tensor(f"vocab_size = {vocab_size}\nn_types = {n_types}\n")
    entries["__step__"] = np.array([float(step)])
    return encode_entries(entries)


def save_checkpoint(
    path: Union[str, os.PathLike], model: ScaleMoENet, cfg: TrainConfig, step: int, vocab_size: int, n_types: int
) -> Path:
    """Snap the model to f32 in place, then write it.  The in-memory model and
    a model restored from the file produce bit-identical forwards afterwards."""
    snap_to_f32(model)
    data = checkpoint_bytes(model, cfg, step, vocab_size, n_types)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(data)
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def load_checkpoint(path: Union[str, os.PathLike]) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read checkpoint {path}: {exc}") from exc
    _, entries = decode_entries(data)
    missing = [k for k in RESERVED if k not in entries]
    if missing:
        raise CorruptRecord(f"checkpoint lacks {missing}")
    cfg = load_config(overrides=parse_config_text(_tensor_text(entries.pop("__config__"))))
    meta = parse_config_text(_tensor_text(entries.pop("__model__")))
    step = int(entries.pop("__step__")[0])
    return Checkpoint(cfg, int(meta["vocab_size"]), int(meta["n_types"]), step, entries)


def save_loaded(path: Union[str, os.PathLike], ckpt: Checkpoint) -> None:
    """Write a loaded checkpoint back out unchanged."""
    entries = dict(ckpt.state)
    entries["__config__"] = _text_tensor(ckpt.config.to_text())
    entries["__model__"] = _text_tensor(f"vocab_size = {ckpt.vocab_size}\nn_types = {ckpt.n_types}\n")
    entries["__step__"] = np.array([float(ckpt.step)])
    Path(path).write_bytes(encode_entries(entries))
