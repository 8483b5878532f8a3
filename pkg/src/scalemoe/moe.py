"""Hard-routed mixture of multi-scale experts.

Each expert projects every pyramid level to ``D`` channels (1×1 conv),
resizes it to the alignment grid of one chosen level, runs it through a
three-layer conv-BN-ReLU body shared across scales, and fuses the processed
scales with per-location softmax weights from a 1×1 scale-attention head:

    V_k[b, :, y, x] = sum_l beta[b, l, y, x] * F~_l[b, :, y, x]

The router is a two-layer MLP without biases, ``softmax(relu(t W1) W2)``.
Only the argmax expert runs for a sample; samples are grouped by expert so
each expert executes at most once per batch.  The argmax carries no gradient.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .encoders import FeaturePyramid
from .exceptions import IndexOutOfRange, InvalidConfig, InvalidLevel, ShapeMismatch
from .nn import Conv2d, ConvBNReLU, Linear, Module
from .tensor import Tensor, ops


@dataclass
class RouterDecision:
    alpha: Tensor  # B×K routing probabilities
    selected: np.ndarray  # (B,) argmax, lowest index on ties
    logits: Tensor  # B×K pre-softmax scores


@dataclass
class ScaleAttentionMap:
    beta: Tensor  # B×L×h×w, softmax over L at every location


@dataclass
class LocalGrid:
    V: Tensor  # B×M×D, rows unit norm (what attention consumes)
    fused: Tensor  # B×M×D, V_k before normalisation
    grid: tuple  # (h, w) of the alignment grid, M = h*w
    scale_features: Optional[list] = None  # processed per-scale maps, B×D×h×w each


class Router(Module):
    def __init__(self, embed_dim: int, hidden: int, n_experts: int, rng: np.random.Generator):
        if n_experts < 1 or hidden < 1:
            raise InvalidConfig(f"router needs K >= 1 and hidden width >= 1, got K={n_experts}, D_r={hidden}")
        self.w1 = Linear(embed_dim, hidden, rng, bias=False, gain=np.sqrt(2.0))
        self.w2 = Linear(hidden, n_experts, rng, bias=False)

    @property
    def n_experts(self) -> int:
        return self.w2.weight.shape[1]

    def logits(self, x) -> Tensor:
        return self.w2(ops.relu(self.w1(x)))


def route(embedding, router: Router) -> RouterDecision:
    """Score experts from a B×D embedding and pick one per row."""
    x = embedding if isinstance(embedding, Tensor) else Tensor(embedding)
    if x.ndim != 2 or x.shape[1] != router.w1.weight.shape[0]:
        raise ShapeMismatch(f"router expects B×{router.w1.weight.shape[0]} input, got {x.shape}")
    logits = router.logits(x)
    alpha = ops.softmax(logits, axis=1)
    return RouterDecision(alpha=alpha, selected=np.argmax(alpha.data, axis=1), logits=logits)


class Expert(Module):
    def __init__(self, in_channels: Sequence[int], embed_dim: int, rng: np.random.Generator, body_layers: int = 3):
        self.proj = [Conv2d(c, embed_dim, 1, rng, bias=True) for c in in_channels]
        self.body = [ConvBNReLU(embed_dim, embed_dim, rng) for _ in range(body_layers)]
        n = len(in_channels)
        self.scale_head = Conv2d(n * embed_dim, n, 1, rng, bias=True)

    @property
    def n_levels(self) -> int:
        return len(self.proj)


def alignment_grid(pyramid: FeaturePyramid, align_level: int) -> tuple:
    if not isinstance(align_level, (int, np.integer)) or not 1 <= align_level <= len(pyramid):
        raise InvalidLevel(f"align_level must be in 1..{len(pyramid)}, got {align_level!r}")
    return tuple(pyramid.levels[align_level - 1].shape[2:])


def expert_forward(pyramid: FeaturePyramid, expert: Expert, align_level: int) -> tuple[LocalGrid, ScaleAttentionMap]:
    h, w = alignment_grid(pyramid, align_level)
    if len(pyramid) != expert.n_levels:
        raise ShapeMismatch(f"expert built for {expert.n_levels} levels, pyramid has {len(pyramid)}")
    n_levels, b = len(pyramid), pyramid.batch_size
    aligned = [ops.bilinear_resize(proj(f), h, w) for proj, f in zip(expert.proj, pyramid.levels)]
    # one body pass over all scales stacked on the batch axis
    x = ops.concat(aligned, axis=0) if n_levels > 1 else aligned[0]
    for layer in expert.body:
        x = layer(x)
    d = x.shape[1]
    stacked = ops.reshape(x, (n_levels, b, d, h, w))
    per_sample = ops.transpose(stacked, (1, 0, 2, 3, 4))  # B×L×D×h×w
    beta = ops.softmax(expert.scale_head(ops.reshape(per_sample, (b, n_levels * d, h, w))), axis=1)
    fused = ops.sum(per_sample * ops.reshape(beta, (b, n_levels, 1, h, w)), axis=1)  # B×D×h×w
    fused = ops.transpose(ops.reshape(fused, (b, d, h * w)), (0, 2, 1))
    scale_features = [ops.take(stacked, np.array(l), axis=0) for l in range(n_levels)]
    return (
        LocalGrid(V=ops.l2_normalize(fused, axis=2), fused=fused, grid=(h, w), scale_features=scale_features),
        ScaleAttentionMap(beta=beta),
    )


@dataclass
class ActivationCounter:
    """Expert usage: ``invocations`` counts expert forward calls, ``samples``
    counts samples routed through each expert, and ``per_sample_runs`` holds
    how many experts ran for each sample seen, in batch order."""

    invocations: Counter = field(default_factory=Counter)
    samples: Counter = field(default_factory=Counter)
    per_sample_runs: list = field(default_factory=list)

    def record(self, expert: int, n_samples: int) -> None:
        self.invocations[int(expert)] += 1
        self.samples[int(expert)] += int(n_samples)

    def merge(self, other: "ActivationCounter") -> None:
        self.invocations.update(other.invocations)
        self.samples.update(other.samples)
        self.per_sample_runs.extend(other.per_sample_runs)

    def histogram(self, n_experts: int) -> dict[int, int]:
        return {k: self.samples.get(k, 0) for k in range(n_experts)}

    def format(self, n_experts: int) -> str:
        return ",".join(f"{k}:{v}" for k, v in self.histogram(n_experts).items())


def local_features(
    pyramid: FeaturePyramid,
    decision: RouterDecision,
    experts: Sequence[Expert],
    align_level: int,
    counter: Optional[ActivationCounter] = None,
) -> tuple[LocalGrid, ScaleAttentionMap]:
    """Run only each sample's selected expert and reassemble in batch order."""
    selected = np.asarray(decision.selected, dtype=np.int64)
    b = pyramid.batch_size
    if selected.shape != (b,):
        raise ShapeMismatch(f"{selected.shape[0] if selected.ndim else 0} routing decisions for batch of {b}")
    if (selected < 0).any() or (selected >= len(experts)).any():
        raise IndexOutOfRange(f"selected experts {selected.tolist()} outside 0..{len(experts) - 1}")
    alignment_grid(pyramid, align_level)

    grids, betas, order = [], [], []
    runs = np.zeros(b, dtype=np.int64)
    for k in np.unique(selected):
        idx = np.flatnonzero(selected == k)
        sub = pyramid if len(idx) == b else pyramid.select(idx)
        grid, att = expert_forward(sub, experts[k], align_level)
        runs[idx] += 1
        if counter is not None:
            counter.record(k, len(idx))
        grids.append(grid)
        betas.append(att.beta)
        order.append(idx)
    if counter is not None:
        counter.per_sample_runs.extend(runs.tolist())
    if not (runs == 1).all():
        raise AssertionError(f"hard routing violated: per-sample expert runs {runs.tolist()}")

    if len(grids) == 1:
        return LocalGrid(grids[0].V, grids[0].fused, grids[0].grid), ScaleAttentionMap(betas[0])
    inverse = np.argsort(np.concatenate(order), kind="stable")
    V = ops.take(ops.concat([g.V for g in grids], axis=0), inverse, axis=0)
    fused = ops.take(ops.concat([g.fused for g in grids], axis=0), inverse, axis=0)
    beta = ops.take(ops.concat(betas, axis=0), inverse, axis=0)
    return LocalGrid(V, fused, grids[0].grid), ScaleAttentionMap(beta)
