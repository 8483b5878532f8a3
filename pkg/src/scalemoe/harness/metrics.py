"""Append-only ``key=value`` logs.

Every record is one line of space-separated ``key=value`` pairs.  Floats are
written with ``repr`` so they round-trip exactly.  Wall-clock time lives in a
sidecar file next to the metrics log so that two runs with the same seed
produce byte-identical metrics logs.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Mapping, Union

from ..exceptions import CorruptRecord, IoFailure


def format_value(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, Mapping):
        return ",".join(f"{k}:{v}" for k, v in value.items())
    text = str(value)
    if not text or any(ch.isspace() for ch in text) or "=" in text:
        raise ValueError(f"metric value {text!r} is not a single token")
    return text


def format_record(record: Mapping[str, object]) -> str:
    return " ".join(f"{k}={format_value(v)}" for k, v in record.items())


def parse_value(text: str):
    for kind in (int, float):
        try:
            return kind(text)
        except ValueError:
            pass
    return text


def parse_record(line: str) -> dict:
    out = {}
    for pair in line.split():
        key, sep, value = pair.partition("=")
        if not sep:
            raise CorruptRecord(f"malformed metrics field {pair!r}")
        out[key] = parse_value(value)
    return out


def read_log(path: Union[str, os.PathLike]) -> list[dict]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoFailure(f"cannot read log {path}: {exc}") from exc
    return [parse_record(line) for line in lines if line]


class MetricsLog:
    """Writes one line per record and flushes after each, so a crash loses nothing."""

    def __init__(self, path: Union[str, os.PathLike]):
        self.path = Path(path)
        try:
            self._fh = open(self.path, "w", encoding="utf-8", newline="\n")
        except OSError as exc:
            raise IoFailure(f"cannot open log {self.path}: {exc}") from exc
        self.records: list[dict] = []

    def append(self, record: Mapping[str, object]) -> None:
        self._fh.write(format_record(record) + "\n")
        self._fh.flush()
        self.records.append(dict(record))

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "MetricsLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
