"""Contrastive, attention and auxiliary losses plus their weighted total.

Every loss is averaged over the batch so magnitudes do not depend on B.
Similarities are cosines; inputs that are supposed to be unit vectors are
checked (tolerance 1e-4) rather than silently renormalised.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .encoders import TextEncoding
from .exceptions import (
    EmptyReport,
    InvalidConfig,
    InvalidTemperature,
    LabelOutOfRange,
    NonNormalizedInput,
    ShapeMismatch,
)
from .moe import LocalGrid
from .nn import Module, parameter
from .tensor import Tensor, ops

NORM_TOL = 1e-4


def _check_tau(tau: float) -> float:
    if not (isinstance(tau, (int, float, np.floating)) and np.isfinite(tau) and tau > 0):
        raise InvalidTemperature(f"temperature must be a positive finite number, got {tau!r}")
    return float(tau)


def _check_unit_rows(x: Tensor, what: str, mask: Optional[np.ndarray] = None) -> None:
    norms = np.linalg.norm(x.data, axis=-1)
    if mask is not None:
        norms = norms[mask]
    if norms.size and np.abs(norms - 1.0).max() > NORM_TOL:
        raise NonNormalizedInput(f"{what} rows must be L2-normalised (max |norm-1| = {np.abs(norms - 1).max():.3g})")


def global_contrastive(v_g, t_g, tau: float, symmetric: bool = False) -> Tensor:
    """Image-to-report InfoNCE with matched pairs on the diagonal."""
    tau = _check_tau(tau)
    v_g = v_g if isinstance(v_g, Tensor) else Tensor(v_g)
    t_g = t_g if isinstance(t_g, Tensor) else Tensor(t_g)
    if v_g.ndim != 2 or v_g.shape != t_g.shape or v_g.shape[0] < 1:
        raise ShapeMismatch(f"global_contrastive needs equal B×D inputs, got {v_g.shape} and {t_g.shape}")
    _check_unit_rows(v_g, "image embedding")
    _check_unit_rows(t_g, "report embedding")
    b = v_g.shape[0]
    eye = np.eye(b)
    logits = ops.matmul(v_g, ops.transpose(t_g)) * (1.0 / tau)
    i2t = -ops.sum(ops.log_softmax(logits, axis=1) * eye) * (1.0 / b)
    if not symmetric:
        return i2t
    t2i = -ops.sum(ops.log_softmax(logits, axis=0) * eye) * (1.0 / b)
    return (i2t + t2i) * 0.5


@dataclass
class WordRegionAttention:
    a: Tensor  # B×N×M
    c: Tensor  # B×N×D
    token_mask: np.ndarray  # B×N, False on padding rows (excluded downstream)


def word_region_attention(text, regions, tau: float, token_mask=None) -> WordRegionAttention:
    """``a_ij = softmax_j(t_i . v_j / tau)``, ``c_i = sum_j a_ij v_j``."""
    tau = _check_tau(tau)
    if isinstance(text, TextEncoding):
        tokens, token_mask = text.tokens, text.mask if token_mask is None else token_mask
    else:
        tokens = text if isinstance(text, Tensor) else Tensor(text)
    V = regions.V if isinstance(regions, LocalGrid) else (regions if isinstance(regions, Tensor) else Tensor(regions))
    if tokens.ndim != 3 or V.ndim != 3 or tokens.shape[0] != V.shape[0] or tokens.shape[2] != V.shape[2]:
        raise ShapeMismatch(f"word_region_attention: tokens {tokens.shape} vs regions {V.shape}")
    if token_mask is None:
        token_mask = np.ones(tokens.shape[:2], dtype=bool)
    token_mask = np.asarray(token_mask, dtype=bool)
    if token_mask.shape != tokens.shape[:2]:
        raise ShapeMismatch(f"token mask {token_mask.shape} vs tokens {tokens.shape}")
    logits = ops.matmul(tokens, ops.swapaxes(V, 1, 2)) * (1.0 / tau)
    a = ops.softmax(logits, axis=2)
    c = ops.matmul(a, V)
    return WordRegionAttention(a=a, c=c, token_mask=token_mask)


def local_contrastive(
    att: WordRegionAttention,
    text,
    tau: float,
    denominator: str = "tokens",
    regions=None,
) -> Tensor:
    """Token-to-context InfoNCE.

    ``denominator="tokens"`` contrasts each context vector against the other
    tokens of the same report, normalised by the valid token count, then
    averaged over the batch.  ``denominator="batch"`` instead scores every
    (report, image) pair by the mean token/context cosine (attending each
    report over every image's regions, which requires ``regions``) and
    contrasts reports against the images of the batch.
    """
    tau = _check_tau(tau)
    tokens = text.tokens if isinstance(text, TextEncoding) else (text if isinstance(text, Tensor) else Tensor(text))
    mask = att.token_mask
    n_valid = mask.sum(axis=1)
    if (n_valid < 1).any():
        raise EmptyReport("local_contrastive needs at least one valid token per sample")
    if denominator == "tokens":
        sims = ops.matmul(ops.l2_normalize(att.c, axis=2), ops.swapaxes(tokens, 1, 2)) * (1.0 / tau)  # B×N×N
        logp = ops.log_softmax(sims, axis=2, mask=mask[:, None, :])
        n = tokens.shape[1]
        diag = np.eye(n)[None] * mask[:, :, None]
        per_sample = -ops.sum(logp * diag, axis=(1, 2)) * (1.0 / n_valid)
        return ops.mean(per_sample)
    if denominator == "batch":
        if regions is None:
            raise InvalidConfig("denominator='batch' needs the local regions of every image")
        V = regions.V if isinstance(regions, LocalGrid) else regions
        b, n, d = tokens.shape
        m = V.shape[1]
        # reports on axis 0, images on axis 1
        logits = ops.matmul(ops.reshape(tokens, (b, 1, n, d)), ops.reshape(ops.swapaxes(V, 1, 2), (1, b, d, m)))
        a = ops.softmax(logits * (1.0 / tau), axis=3)
        ctx = ops.l2_normalize(ops.matmul(a, ops.reshape(V, (1, b, m, d))), axis=3)
        cos = ops.sum(ctx * ops.reshape(tokens, (b, 1, n, d)), axis=3)  # B×B×N
        weights = (mask / n_valid[:, None])[:, None, :]
        scores = ops.sum(cos * weights, axis=2) * (1.0 / tau)
        return -ops.sum(ops.log_softmax(scores, axis=1) * np.eye(b)) * (1.0 / b)
    raise InvalidConfig(f"unknown local loss denominator {denominator!r}")


class AuxHead(Module):
    """Linear report-type classifier on the report embedding (no bias)."""

    def __init__(self, embed_dim: int, n_types: int, rng: np.random.Generator):
        if n_types < 2:
            raise InvalidConfig(f"auxiliary head needs at least 2 report types, got {n_types}")
        self.weight = parameter(rng.normal(0.0, 1.0 / np.sqrt(embed_dim), size=(embed_dim, n_types)))

    @property
    def n_types(self) -> int:
        return self.weight.shape[1]


def _check_labels(y, n: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    if y.size and (y.min() < 0 or y.max() >= n):
        raise LabelOutOfRange(f"labels {sorted(set(y.tolist()))} outside 0..{n - 1}")
    return y


def aux_loss(t_g, head: AuxHead, y) -> Tensor:
    """Mean cross-entropy of ``softmax(t_g @ W_c)`` against report types ``y``."""
    y = _check_labels(y, head.n_types)
    return ops.cross_entropy(ops.matmul(t_g, head.weight), y)


def routing_loss(logits, y) -> Tensor:
    """Cross-entropy of router scores against the expert each type should use."""
    logits = logits if isinstance(logits, Tensor) else Tensor(logits)
    k = logits.shape[1]
    y = np.asarray(y, dtype=np.int64) % k
    return ops.cross_entropy(logits, y)


@dataclass
class LossBundle:
    global_loss: Tensor
    local_loss: Tensor
    aux_loss: Tensor
    total: Tensor
    tau: float
    lam: float

    def values(self) -> dict[str, float]:
        return {
            "global": self.global_loss.item(),
            "local": self.local_loss.item(),
            "aux": self.aux_loss.item(),
            "total": self.total.item(),
        }


def total_loss(global_loss, local_loss, aux, lam: float, tau: float = 0.07) -> LossBundle:
    """``total = (global + local) + lam * aux``, always accumulated in that order."""
    if not (np.isfinite(lam) and lam >= 0):
        raise InvalidConfig(f"lambda must be a non-negative finite number, got {lam!r}")
    g = global_loss if isinstance(global_loss, Tensor) else Tensor(global_loss)
    l = local_loss if isinstance(local_loss, Tensor) else Tensor(local_loss)
    a = aux if isinstance(aux, Tensor) else Tensor(aux)
    total = (g + l) + a * float(lam)
    return LossBundle(g, l, a, total, float(tau), float(lam))
