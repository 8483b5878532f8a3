"""Image pyramid encoder and token/report text encoder.

The image backbone is a stride-4 patch stem followed by four convolution
stages (two conv-BN-ReLU blocks each).  Stage 1 keeps the stem resolution and
stages 2-4 halve it, giving levels at H/4, H/8, H/16 and H/32.  The global
image embedding is a linear projection of the spatial mean of the coarsest
level.

The text encoder embeds tokens, runs a two-layer per-token MLP with a linear
skip from the token embedding, and pools the valid (non-padding) positions
by their mean before a final projection.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .exceptions import BadResolution, EmptyReport, InvalidConfig, ShapeMismatch, UnknownToken
from .nn import BatchNorm2d, Conv2d, ConvBNReLU, Embedding, Linear, Module
from .tensor import Tensor, ops

DEFAULT_CHANNELS = (32, 64, 128, 256)


@dataclass
class FeaturePyramid:
    levels: list  # L tensors, B×C_l×h_l×w_l, finest first
    base_resolution: tuple

    def __len__(self) -> int:
        return len(self.levels)

    @property
    def batch_size(self) -> int:
        return self.levels[0].shape[0]

    def select(self, indices) -> "FeaturePyramid":
        idx = np.asarray(indices, dtype=np.int64)
        return FeaturePyramid([ops.take(f, idx, axis=0) for f in self.levels], self.base_resolution)


@dataclass
class TextEncoding:
    tokens: Tensor  # B×N×D, rows unit norm
    report: Tensor  # B×D, rows unit norm (the global report embedding)
    valid_len: np.ndarray  # (B,)

    @property
    def mask(self) -> np.ndarray:
        n = self.tokens.shape[1]
        return np.arange(n)[None, :] < self.valid_len[:, None]


def check_resolution(h: int, w: int) -> None:
    if h < 32 or w < 32 or h % 32 or w % 32:
        raise BadResolution(f"image size {h}×{w} must be a multiple of 32 and at least 32")


class ImageEncoder(Module):
    def __init__(self, rng: np.random.Generator, channels: Sequence[int] = DEFAULT_CHANNELS, embed_dim: int = 128):
        channels = tuple(int(c) for c in channels)
        if len(channels) != 4 or any(c < 1 for c in channels):
            raise InvalidConfig(f"need four positive channel widths, got {channels}")
        if any(b < a for a, b in zip(channels, channels[1:])):
            raise InvalidConfig(f"channel widths must be non-decreasing, got {channels}")
        self.channels = channels
        self.stem = Conv2d(3, channels[0], 4, rng, stride=4)
        self.stem_bn = BatchNorm2d(channels[0])
        stages = []
        prev = channels[0]
        for i, c in enumerate(channels):
            stages.append([ConvBNReLU(prev, c, rng, stride=1 if i == 0 else 2), ConvBNReLU(c, c, rng)])
            prev = c
        self.stages = [blk for stage in stages for blk in stage]
        self.proj = Linear(channels[-1], embed_dim, rng)

    def __call__(self, images) -> tuple[FeaturePyramid, Tensor]:
        x = images if isinstance(images, Tensor) else Tensor(images)
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeMismatch(f"expected B×3×H×W images, got {x.shape}")
        h, w = x.shape[2:]
        check_resolution(h, w)
        x = ops.relu(self.stem_bn(self.stem(x)))
        levels = []
        for i in range(0, len(self.stages), 2):
            x = self.stages[i + 1](self.stages[i](x))
            levels.append(x)
        pooled = ops.mean(levels[-1], axis=(2, 3))
        v_g = ops.l2_normalize(self.proj(pooled), axis=1)
        return FeaturePyramid(levels, (h, w)), v_g


class TextEncoder(Module):
    def __init__(self, vocab_size: int, rng: np.random.Generator, embed_dim: int = 128, token_dim: Optional[int] = None):
        token_dim = token_dim or embed_dim
        self.vocab_size = int(vocab_size)
        self.embedding = Embedding(vocab_size, token_dim, rng)
        self.fc1 = Linear(token_dim, embed_dim, rng, gain=np.sqrt(2.0))
        self.fc2 = Linear(embed_dim, embed_dim, rng)
        self.pool = Linear(embed_dim, embed_dim, rng)
        self.skip = Linear(token_dim, embed_dim, rng, bias=False)

    def __call__(self, token_ids, valid_len=None) -> TextEncoding:
        ids = np.asarray(token_ids)
        if ids.ndim != 2:
            raise ShapeMismatch(f"token ids must be a B×N matrix, got shape {ids.shape}")
        if not np.issubdtype(ids.dtype, np.integer):
            raise UnknownToken("token ids must be integers")
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            bad = ids[(ids < 0) | (ids >= self.vocab_size)][0]
            raise UnknownToken(f"token id {bad} outside vocabulary of size {self.vocab_size}")
        if valid_len is None:
            valid_len = (ids != 0).sum(axis=1)
        valid_len = np.asarray(valid_len, dtype=np.int64)
        if valid_len.shape != (ids.shape[0],) or (valid_len > ids.shape[1]).any():
            raise ShapeMismatch(f"valid_len {valid_len} does not fit token matrix {ids.shape}")
        if (valid_len < 1).any():
            raise EmptyReport(f"reports need at least one token, got valid lengths {valid_len.tolist()}")

        e = self.embedding(ids)
        # the skip term keeps a token with all hidden units dead off the zero vector
        h = self.fc2(ops.relu(self.fc1(e))) + self.skip(e)  # B×N×D
        mask = (np.arange(ids.shape[1])[None, :] < valid_len[:, None]).astype(np.float64)
        pooled = ops.sum(h * mask[:, :, None], axis=1) * (1.0 / valid_len)[:, None]
        return TextEncoding(
            tokens=ops.l2_normalize(h, axis=2),
            report=ops.l2_normalize(self.pool(pooled), axis=1),
            valid_len=valid_len,
        )


def encode_image(images, encoder: ImageEncoder) -> tuple[FeaturePyramid, Tensor]:
    return encoder(images)


def encode_text(token_ids, encoder: TextEncoder, valid_len=None) -> TextEncoding:
    return encoder(token_ids, valid_len)
