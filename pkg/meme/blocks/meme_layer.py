"""
Mixture of Modal Experts Layer

One injection point of the modal branch: route modal tokens to specialized
experts, run the shared expert, fuse both into M_k and turn M_k into a prompt
for the RGB tokens at the same depth.
"""

from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn

from models.config import GateConfig
from ..tokenizer import TokenSequence
from .experts import LowRankExpert, SharedExpert
from .fusion import FusionBlock
from .prompt import PromptBlock
from .router import NoisyTopKRouter, RouterDecision, combine, dispatch


@dataclass
class LayerOutput:
    """
    Result of one MeME layer.

    Attributes:
        prompt (torch.Tensor): [..., N, D_rgb] added to the RGB stream
        modal_matrix (torch.Tensor): M_k, [..., N, K]
        decision (RouterDecision, optional): None when the layer has no routed experts
        evaluations (int): Specialized-expert evaluations performed
    """
    prompt: torch.Tensor
    modal_matrix: torch.Tensor
    decision: Optional[RouterDecision]
    evaluations: int


class MemeLayer(nn.Module):
    """
    Router, experts, fusion and prompt for one injection point.

    Args:
        embed_dim (int): Modal token width D
        rgb_dim (int): RGB token width D_rgb
        rank (int): Latent width K
        gate_cfg (GateConfig): Router configuration
        use_shared (bool): Keep the shared expert
        use_specific (bool): Keep the router and the specialized experts
    """

    def __init__(self, embed_dim: int, rgb_dim: int, rank: int, gate_cfg: GateConfig,
                 use_shared: bool = True, use_specific: bool = True):
        super().__init__()
        self.rank = rank
        self.use_shared = use_shared
        self.use_specific = use_specific

        if use_specific:
            self.router = NoisyTopKRouter(embed_dim, gate_cfg)
            self.experts = nn.ModuleList(
                [LowRankExpert(embed_dim, rank) for _ in range(gate_cfg.num_experts)]
            )
        if use_shared:
            self.shared = SharedExpert(embed_dim, rank)

        self.fusion = FusionBlock(rank)
        self.prompt = PromptBlock(rgb_dim, rank)

    def forward(self, modal: TokenSequence, rgb_tokens: torch.Tensor,
                generator: Optional[torch.Generator] = None) -> LayerOutput:
        tokens = modal.tokens
        zeros = tokens.new_zeros(*tokens.shape[:-1], self.rank)

        decision = None
        evaluations = 0
        routed = zeros
        if self.use_specific:
            decision = self.router(tokens, generator)
            outputs, evaluations = dispatch(tokens, self.experts, decision)
            routed = combine(outputs, decision)

        shared = self.shared(tokens, (modal.template_grid, modal.search_grid)) if self.use_shared else zeros

        modal_matrix = self.fusion(routed, shared)
        return LayerOutput(
            prompt=self.prompt(rgb_tokens, modal_matrix),
            modal_matrix=modal_matrix,
            decision=decision,
            evaluations=evaluations,
        )
