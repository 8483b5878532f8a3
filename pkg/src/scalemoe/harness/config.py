"""Training configuration and its ``key = value`` text form.

A config file holds one ``key = value`` pair per line, keys spelled exactly as
the :class:`TrainConfig` field names.  Blank lines and lines starting with
``#`` are ignored.  Command-line overrides use the same keys and win over the
file.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Mapping, Optional, Union

import numpy as np

from ..exceptions import InvalidConfig, IoFailure

ROUTER_INPUTS = ("text", "image")
DENOMINATORS = ("tokens", "batch")


@dataclass
class TrainConfig:
    dataset: str = ""
    out_dir: str = "run"
    batch_size: int = 32
    steps: int = 1000
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 0.0
    grad_clip: float = 5.0
    grad_accum: int = 1
    tau: float = 0.07
    lam: float = 0.5
    n_experts: int = 4
    align_level: int = 3
    embed_dim: int = 128
    router_hidden: int = 64
    channels: str = "32,64,128,256"
    seed: int = 0
    router_input: str = "image"
    train_router_input: str = "text"
    local_loss_denominator: str = "tokens"
    symmetric_global: bool = False
    eval_every: int = 250

    @property
    def channel_widths(self) -> tuple:
        try:
            widths = tuple(int(c) for c in str(self.channels).split(","))
        except ValueError as exc:
            raise InvalidConfig(f"channels must be comma-separated integers, got {self.channels!r}") from exc
        return widths

    def validate(self) -> "TrainConfig":
        if self.batch_size < 2:
            raise InvalidConfig(f"batch_size must be >= 2 (batch norm needs two samples), got {self.batch_size}")
        for name in ("steps", "grad_accum", "n_experts", "embed_dim", "router_hidden", "eval_every"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("lr", "momentum", "weight_decay", "grad_clip", "lam"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value >= 0):
                raise InvalidConfig(f"{name} must be a non-negative finite number, got {value}")
        if self.momentum >= 1:
            raise InvalidConfig(f"momentum must be < 1, got {self.momentum}")
        if not (np.isfinite(self.tau) and self.tau > 0):
            raise InvalidConfig(f"tau must be positive, got {self.tau}")
        if not 1 <= self.align_level <= 4:
            raise InvalidConfig(f"align_level must be in 1..4, got {self.align_level}")
        if self.router_input not in ROUTER_INPUTS or self.train_router_input not in ROUTER_INPUTS:
            raise InvalidConfig(f"router inputs must be one of {ROUTER_INPUTS}")
        if self.local_loss_denominator not in DENOMINATORS:
            raise InvalidConfig(f"local_loss_denominator must be one of {DENOMINATORS}")
        widths = self.channel_widths
        if len(widths) != 4 or min(widths) < 1:
            raise InvalidConfig(f"channels needs four positive widths, got {self.channels!r}")
        return self

    def to_text(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in asdict(self).items())

    def replace(self, **overrides) -> "TrainConfig":
        return from_mapping({**asdict(self), **overrides})


FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def _coerce(key: str, raw) -> object:
    kind = FIELD_TYPES[key]
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if kind == "bool":
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError as exc:
        raise InvalidConfig(f"{key}: cannot parse {raw!r} as {kind}") from exc
    return text


def from_mapping(values: Mapping[str, object]) -> TrainConfig:
    unknown = sorted(set(values) - set(FIELD_TYPES))
    if unknown:
        raise InvalidConfig(f"unknown config keys: {', '.join(unknown)}")
    return TrainConfig(**{k: _coerce(k, v) for k, v in values.items()})


def parse_config_text(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise InvalidConfig(f"line {lineno}: expected 'key = value', got {line!r}")
        values[key.strip()] = value.strip()
    return values


def load_config(
    path: Optional[Union[str, os.PathLike]] = None, overrides: Optional[Mapping[str, object]] = None
) -> TrainConfig:
    """File values, then overrides (``None`` values are ignored), then validation."""
    values: dict[str, object] = {}
    if path is not None:
        try:
            values.update(parse_config_text(Path(path).read_text(encoding="utf-8")))
        except OSError as exc:
            raise IoFailure(f"cannot read config {path}: {exc}") from exc
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return from_mapping(values).validate()
