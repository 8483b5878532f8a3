"""Reading a generated corpus directory back into batches."""

from __future__ import annotations

import json
import os
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from ..exceptions import CorruptRecord, IndexOutOfRange, IoFailure
from ..tensor import mmt
from .generator import CorpusConfig, Vocabulary

PAD_ID = 0
VAL_PERCENT = 20


def split_of(sample_id: int) -> str:
    """Fixed, seed-independent 80/20 split: CRC-32 of the decimal id, mod 100."""
    return "val" if zlib.crc32(str(int(sample_id)).encode("ascii")) % 100 < VAL_PERCENT else "train"


@dataclass
class Batch:
    ids: np.ndarray  # (B,)
    images: np.ndarray  # (B, 3, H, W)
    token_ids: np.ndarray  # (B, N) int, padded with PAD_ID
    valid_len: np.ndarray  # (B,)
    modality: np.ndarray  # (B,)
    class_label: np.ndarray  # (B,)

    def __len__(self) -> int:
        return len(self.ids)


def pad_reports(reports: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    valid = np.array([len(r) for r in reports], dtype=np.int64)
    out = np.full((len(reports), int(valid.max())), PAD_ID, dtype=np.int64)
    for i, r in enumerate(reports):
        out[i, : len(r)] = r
    return out, valid


class Dataset:
    """A corpus directory.  Images are checksum-verified on first load and cached."""

    def __init__(self, root: Union[str, os.PathLike], cache: bool = True):
        self.root = Path(root)
        try:
            lines = (self.root / "manifest.jsonl").read_text(encoding="utf-8").splitlines()
            self.vocab = Vocabulary((self.root / "vocab.txt").read_text(encoding="utf-8").splitlines())
            self.config = CorpusConfig(**json.loads((self.root / "corpus.json").read_text(encoding="utf-8")))
            prompt_lines = (self.root / "prompts.jsonl").read_text(encoding="utf-8").splitlines()
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise IoFailure(f"{self.root} is not a readable corpus directory: {exc}") from exc
        try:
            self.records = [json.loads(line) for line in lines if line]
        except json.JSONDecodeError as exc:
            raise CorruptRecord(f"malformed manifest line in {self.root}: {exc}") from exc
        self.prompts = {}
        for line in prompt_lines:
            rec = json.loads(line)
            self.prompts[(rec["modality"], rec["class"])] = rec["token_ids"]
        self.modality = np.array([r["modality"] for r in self.records], dtype=np.int64)
        self.class_label = np.array([r["class"] for r in self.records], dtype=np.int64)
        self.sample_ids = np.array([r["id"] for r in self.records], dtype=np.int64)
        self._cache: dict[int, np.ndarray] | None = {} if cache else None

    def __len__(self) -> int:
        return len(self.records)

    @property
    def n_modalities(self) -> int:
        return self.config.n_modalities

    @property
    def n_classes(self) -> int:
        return self.config.classes_per_modality

    def split_indices(self, split: str) -> np.ndarray:
        return np.array([i for i, r in enumerate(self.records) if split_of(r["id"]) == split], dtype=np.int64)

    def image(self, index: int) -> np.ndarray:
        if self._cache is not None and index in self._cache:
            return self._cache[index]
        rec = self.records[index]
        try:
            blob = (self.root / rec["image"]).read_bytes()
        except OSError as exc:
            raise IoFailure(f"cannot read image of record {rec['id']}: {exc}") from exc
        if zlib.crc32(blob) != rec["checksum"]:
            raise CorruptRecord(f"checksum mismatch for record {rec['id']} ({rec['image']})")
        img = mmt.decode(blob)
        if self._cache is not None:
            self._cache[index] = img
        return img

    def load_batch(self, indices) -> Batch:
        idx = np.asarray(indices, dtype=np.int64).reshape(-1)
        if idx.size == 0 or idx.min() < 0 or idx.max() >= len(self):
            raise IndexOutOfRange(f"batch indices must lie in [0, {len(self)})")
        tokens, valid = pad_reports([self.records[i]["token_ids"] for i in idx])
        return Batch(
            ids=self.sample_ids[idx],
            images=np.stack([self.image(i) for i in idx]),
            token_ids=tokens,
            valid_len=valid,
            modality=self.modality[idx],
            class_label=self.class_label[idx],
        )


def load_batch(dataset: Union[Dataset, str, os.PathLike], indices) -> Batch:
    ds = dataset if isinstance(dataset, Dataset) else Dataset(dataset)
    return ds.load_batch(indices)
