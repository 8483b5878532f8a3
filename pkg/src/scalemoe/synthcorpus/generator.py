"""Synthetic image/report corpus with modality-specific spatial structure.

Each modality hides its class signal at a characteristic spatial scale:

=============  ==========================================================
modality        class signal
=============  ==========================================================
0 ``xray``      image-wide brightness ramp; the class is the ramp direction
1 ``ultrasound`` oriented stripe texture (period ~W/8); class is orientation
2 ``mri``       one small high-contrast lesion; class fixes its quadrant
                and its shape (round, wide, tall, ring)
3 ``ct``        two medium discs; class fixes their arrangement
=============  ==========================================================

Gaussian pixel noise of standard deviation ``noise`` is added and values are
clipped to [0, 1].  Reports are ``[modality token, finding tokens...,
distractor tokens...]``.

On-disk layout of a generated directory::

    manifest.jsonl     one JSON record per sample: id, modality, class,
                       token_ids, image, checksum (CRC-32 of the image file)
    images/<id>.mmt    3×H×W image tensor
    vocab.txt          one token per line; line number (from 0) is the id
    prompts.jsonl      zero-shot prompt per (modality, class)
    corpus.json        the generating configuration
"""

from __future__ import annotations

import json
import os
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from ..exceptions import InvalidConfig, IoFailure
from ..tensor import mmt
from .prng import SampleStream

PAD = "<pad>"
MODALITIES = ("xray", "ultrasound", "mri", "ct")
CLASS_NAMES = {
    "xray": ("brighter-left", "brighter-right", "brighter-top", "brighter-bottom"),
    "ultrasound": ("stripes-0", "stripes-45", "stripes-90", "stripes-135"),
    "mri": ("lesion-upper-left", "lesion-upper-right", "lesion-lower-left", "lesion-lower-right"),
    "ct": ("pair-horizontal", "pair-vertical", "pair-diagonal", "pair-antidiagonal"),
}
DISTRACTORS = (
    "the", "study", "shows", "no", "acute", "change", "seen", "image",
    "noted", "stable", "within", "normal", "limits", "and", "of", "with",
)


@dataclass
class CorpusConfig:
    height: int = 64
    width: int = 64
    samples_per_modality: int = 100
    n_modalities: int = 4
    classes_per_modality: int = 4
    findings_per_class: int = 2
    max_distractors: int = 3
    noise: float = 0.05
    seed: int = 0

    def validate(self) -> None:
        if self.height % 32 or self.width % 32 or self.height < 32 or self.width < 32:
            raise InvalidConfig(f"image size {self.height}×{self.width} must be a positive multiple of 32")
        if not 2 <= self.n_modalities <= len(MODALITIES):
            raise InvalidConfig(f"n_modalities must be in [2, {len(MODALITIES)}], got {self.n_modalities}")
        if not 1 <= self.classes_per_modality <= 4:
            raise InvalidConfig(f"classes_per_modality must be in [1, 4], got {self.classes_per_modality}")
        if self.samples_per_modality < 1 or self.findings_per_class < 1 or self.max_distractors < 0:
            raise InvalidConfig("samples_per_modality and findings_per_class must be >= 1, max_distractors >= 0")
        if not self.noise >= 0:
            raise InvalidConfig(f"noise must be >= 0, got {self.noise}")

    @property
    def n_samples(self) -> int:
        return self.samples_per_modality * self.n_modalities


@dataclass
class Vocabulary:
    tokens: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def ids(self, words) -> list[int]:
        return [self.index[w] for w in words]


def finding_words(modality: int, cls: int, cfg: CorpusConfig) -> list[str]:
    name = MODALITIES[modality]
    return [f"{name}/{CLASS_NAMES[name][cls]}/{j}" for j in range(cfg.findings_per_class)]


def build_vocabulary(cfg: CorpusConfig) -> Vocabulary:
    words = [PAD] + list(MODALITIES[: cfg.n_modalities])
    for m in range(cfg.n_modalities):
        for c in range(cfg.classes_per_modality):
            words += finding_words(m, c, cfg)
    words += list(DISTRACTORS)
    return Vocabulary(words)


def prompt_table(cfg: CorpusConfig, vocab: Vocabulary) -> dict[tuple[int, int], list[int]]:
    """Zero-shot prompt per (modality, class): modality token plus its findings."""
    return {
        (m, c): vocab.ids([MODALITIES[m]] + finding_words(m, c, cfg))
        for m in range(cfg.n_modalities)
        for c in range(cfg.classes_per_modality)
    }


# ---------------------------------------------------------------------------
# image synthesis
# ---------------------------------------------------------------------------


def _grid(h: int, w: int):
    v, u = np.meshgrid((np.arange(h) + 0.5) / h, (np.arange(w) + 0.5) / w, indexing="ij")
    return u, v


def _xray(cls, rs, h, w):
    u, v = _grid(h, w)
    ramp = (1 - u, u, 1 - v, v)[cls]
    amp = rs.uniform(1, 0.5, 0.8)[0]
    offset = rs.uniform(1, -0.05, 0.05)[0]
    return 0.5 + offset + amp * (ramp - 0.5)


def _ultrasound(cls, rs, h, w):
    u, v = _grid(h, w)
    theta = np.deg2rad(45.0 * cls)
    phase = rs.uniform(1, -np.pi / 8, np.pi / 8)[0]
    amp = rs.uniform(1, 0.25, 0.35)[0]
    cycles = 8.0
    along = (u - 0.5) * np.cos(theta) + (v - 0.5) * np.sin(theta)
    return 0.5 + amp * np.sin(2 * np.pi * cycles * along + phase)


_QUADRANTS = ((0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75))


def _mri(cls, rs, h, w):
    u, v = _grid(h, w)
    cu, cv = _QUADRANTS[cls]
    cu += rs.uniform(1, -0.06, 0.06)[0]
    cv += rs.uniform(1, -0.06, 0.06)[0]
    du, dv = (u - cu) * w, (v - cv) * h  # pixel offsets
    if cls == 0:
        blob = np.exp(-(du**2 + dv**2) / (2 * 2.0**2))
    elif cls == 1:
        blob = np.exp(-(du**2 / (2 * 3.5**2) + dv**2 / (2 * 1.2**2)))
    elif cls == 2:
        blob = np.exp(-(du**2 / (2 * 1.2**2) + dv**2 / (2 * 3.5**2)))
    else:
        r = np.sqrt(du**2 + dv**2)
        blob = np.exp(-((r - 3.0) ** 2) / (2 * 0.9**2))
    return 0.1 + 0.8 * blob


_ARRANGEMENTS = (
    ((0.28, 0.5), (0.72, 0.5)),
    ((0.5, 0.28), (0.5, 0.72)),
    ((0.3, 0.3), (0.7, 0.7)),
    ((0.7, 0.3), (0.3, 0.7)),
)


def _ct(cls, rs, h, w):
    u, v = _grid(h, w)
    img = np.full((h, w), 0.3)
    jitter = rs.uniform(4, -0.04, 0.04)
    radius = 7.0 / 64.0
    for k, (cu, cv) in enumerate(_ARRANGEMENTS[cls]):
        r = np.sqrt((u - cu - jitter[2 * k]) ** 2 + (v - cv - jitter[2 * k + 1]) ** 2)
        img += 0.45 / (1.0 + np.exp((r - radius) * 64.0 / 1.5))  # soft-edged disc
    return img


_RENDER = (_xray, _ultrasound, _mri, _ct)


def render_sample(sample_id: int, modality: int, cls: int, cfg: CorpusConfig):
    """(image 3×H×W in [0,1], token words) for one sample, from its own stream."""
    rs = SampleStream(cfg.seed, sample_id)
    h, w = cfg.height, cfg.width
    base = _RENDER[modality](cls, rs, h, w)
    img = base + cfg.noise * rs.normal(h * w).reshape(h, w)
    img = np.clip(img, 0.0, 1.0)
    n_distract = int(rs.integers(cfg.max_distractors + 1)[0])
    distract = [DISTRACTORS[i] for i in rs.integers(len(DISTRACTORS), n_distract)] if n_distract else []
    words = [MODALITIES[modality]] + finding_words(modality, cls, cfg) + distract
    return np.repeat(img[None], 3, axis=0), words


def sample_layout(cfg: CorpusConfig):
    """Yield (sample_id, modality, class) with exact per-modality class balance."""
    for m in range(cfg.n_modalities):
        for i in range(cfg.samples_per_modality):
            yield m * cfg.samples_per_modality + i, m, i % cfg.classes_per_modality


def generate_corpus(cfg: CorpusConfig, out_dir: Union[str, os.PathLike]) -> Path:
    """Write the corpus for ``cfg`` into ``out_dir`` (created if needed)."""
    cfg.validate()
    out = Path(out_dir)
    vocab = build_vocabulary(cfg)
    try:
        (out / "images").mkdir(parents=True, exist_ok=True)
        records = []
        for sid, m, c in sample_layout(cfg):
            image, words = render_sample(sid, m, c, cfg)
            name = f"images/{sid:06d}.mmt"
            blob = mmt.encode(image)
            (out / name).write_bytes(blob)
            records.append(
                {
                    "id": sid,
                    "modality": m,
                    "class": c,
                    "token_ids": vocab.ids(words),
                    "image": name,
                    "checksum": zlib.crc32(blob),
                }
            )
        with open(out / "manifest.jsonl", "w", encoding="utf-8", newline="\n") as fh:
            for rec in records:
                fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
        (out / "vocab.txt").write_text("".join(t + "\n" for t in vocab.tokens), encoding="utf-8")
        with open(out / "prompts.jsonl", "w", encoding="utf-8", newline="\n") as fh:
            for (m, c), ids in prompt_table(cfg, vocab).items():
                fh.write(json.dumps({"modality": m, "class": c, "token_ids": ids}, separators=(",", ":")) + "\n")
        (out / "corpus.json").write_text(json.dumps(asdict(cfg), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write corpus to {out}: {exc}") from exc
    return out
