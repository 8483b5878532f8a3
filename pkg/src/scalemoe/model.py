"""The full network: encoders, two routers, K experts, auxiliary head."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .encoders import DEFAULT_CHANNELS, FeaturePyramid, ImageEncoder, TextEncoder, TextEncoding
from .exceptions import InvalidConfig
from .moe import (
    ActivationCounter,
    Expert,
    LocalGrid,
    Router,
    RouterDecision,
    ScaleAttentionMap,
    local_features,
    route,
)
from .nn import Module
from .objectives import (
    AuxHead,
    LossBundle,
    WordRegionAttention,
    aux_loss,
    global_contrastive,
    local_contrastive,
    routing_loss,
    total_loss,
    word_region_attention,
)
from .tensor import Tensor

ROUTER_INPUTS = ("text", "image")


@dataclass
class ForwardResult:
    losses: LossBundle
    v_g: Tensor
    text: TextEncoding
    text_route: RouterDecision
    image_route: RouterDecision
    local: LocalGrid
    scale_attention: ScaleAttentionMap
    attention: WordRegionAttention


class ScaleMoENet(Module):
    """Image/text encoders with a hard-routed multi-scale expert layer.

    Two routers of identical shape are kept: one scores the report embedding
    (drives expert selection during training) and one scores the global image
    embedding (drives selection when no report exists).  Both are supervised
    towards expert ``y mod K`` for report type ``y``.
    """

    def __init__(
        self,
        vocab_size: int,
        n_types: int = 4,
        channels: Sequence[int] = DEFAULT_CHANNELS,
        embed_dim: int = 128,
        n_experts: int = 4,
        router_hidden: int = 64,
        align_level: int = 3,
        seed: int = 0,
    ):
        if not 1 <= align_level <= 4:
            raise InvalidConfig(f"align_level must be in 1..4, got {align_level}")
        rng = np.random.default_rng(seed)
        self.align_level = int(align_level)
        self.image_encoder = ImageEncoder(rng, channels, embed_dim)
        self.text_encoder = TextEncoder(vocab_size, rng, embed_dim)
        self.experts = [Expert(self.image_encoder.channels, embed_dim, rng) for _ in range(n_experts)]
        self.text_router = Router(embed_dim, router_hidden, n_experts, rng)
        self.image_router = Router(embed_dim, router_hidden, n_experts, rng)
        self.aux_head = AuxHead(embed_dim, n_types, rng)

    @property
    def n_experts(self) -> int:
        return len(self.experts)

    def encode_images(self, images) -> tuple[FeaturePyramid, Tensor]:
        return self.image_encoder(images)

    def encode_reports(self, token_ids, valid_len=None) -> TextEncoding:
        return self.text_encoder(token_ids, valid_len)

    def local(self, pyramid: FeaturePyramid, decision: RouterDecision, counter: Optional[ActivationCounter] = None):
        return local_features(pyramid, decision, self.experts, self.align_level, counter)

    def forward(
        self,
        images,
        token_ids,
        valid_len,
        report_type,
        tau: float = 0.07,
        lam: float = 0.5,
        route_on: str = "text",
        local_denominator: str = "tokens",
        symmetric_global: bool = False,
        counter: Optional[ActivationCounter] = None,
    ) -> ForwardResult:
        if route_on not in ROUTER_INPUTS:
            raise InvalidConfig(f"route_on must be one of {ROUTER_INPUTS}, got {route_on!r}")
        pyramid, v_g = self.encode_images(images)
        text = self.encode_reports(token_ids, valid_len)
        text_route = route(text.report, self.text_router)
        image_route = route(v_g, self.image_router)
        decision = text_route if route_on == "text" else image_route
        grid, beta = self.local(pyramid, decision, counter)
        att = word_region_attention(text, grid, tau)

        l_global = global_contrastive(v_g, text.report, tau, symmetric=symmetric_global)
        l_local = local_contrastive(att, text, tau, denominator=local_denominator, regions=grid)
        l_aux = (
            aux_loss(text.report, self.aux_head, report_type)
            + routing_loss(text_route.logits, report_type)
            + routing_loss(image_route.logits, report_type)
        )
        return ForwardResult(
            losses=total_loss(l_global, l_local, l_aux, lam, tau),
            v_g=v_g,
            text=text,
            text_route=text_route,
            image_route=image_route,
            local=grid,
            scale_attention=beta,
            attention=att,
        )
