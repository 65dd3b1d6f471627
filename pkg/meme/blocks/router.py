"""
Router Block

Noisy top-k gating over the routed experts. Each token gets a probability
vector over experts; the k most probable experts receive the token and their
outputs are mixed with those probabilities.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import torch
import torch.nn as nn

from models.config import GateConfig
from ..errors import ConfigurationError, RoutingError, ShapeError


@dataclass
class RouterDecision:
    """
    Output of the gate for a batch of tokens.

    Attributes:
        probs (torch.Tensor): [..., N, E] row-stochastic gate probabilities
        noisy_logits (torch.Tensor): [..., N, E] logits after the noise draw
        topk (torch.Tensor): [..., N, k] selected expert indices, most probable first
        k (int): Experts selected per token
    """
    probs: torch.Tensor
    noisy_logits: torch.Tensor
    topk: torch.Tensor
    k: int

    @property
    def num_experts(self) -> int:
        return self.probs.shape[-1]

    def selection_mask(self) -> torch.Tensor:
        """Boolean [..., N, E] mask of the (token, expert) pairs that were selected."""
        mask = torch.zeros_like(self.probs, dtype=torch.bool)
        return mask.scatter(-1, self.topk, True)

    def sample_probs(self) -> torch.Tensor:
        """Mean gate probability over each sample's tokens: [B, N, E] → [B, E]."""
        return self.probs.mean(dim=-2)


def select_topk(probs: torch.Tensor, k: int) -> torch.Tensor:
    """Indices of the k largest entries per row; ties go to the lowest index."""
    order = torch.sort(probs, dim=-1, descending=True, stable=True).indices
    return order[..., :k]


def gate(tokens: torch.Tensor, gate_weights: nn.Linear, cfg: GateConfig, training: bool,
         generator: Optional[torch.Generator] = None) -> RouterDecision:
    """
    Compute gate probabilities and the top-k selection.

    Args:
        tokens (torch.Tensor): [..., N, D]
        gate_weights (nn.Linear): D → E map producing the clean logits
        cfg (GateConfig): Expert count, k and noise scale
        training (bool): Noise is drawn only in training mode
        generator (torch.Generator, optional): Randomness stream for the noise

    Returns:
        RouterDecision: probabilities, noisy logits and selected experts

    Raises:
        ConfigurationError: k > E or the gate does not output E logits
        ShapeError: token width does not match the gate
    """
    if cfg.top_k > cfg.num_experts:
        raise ConfigurationError(f"top_k={cfg.top_k} exceeds {cfg.num_experts} experts")
    if gate_weights.out_features != cfg.num_experts:
        raise ConfigurationError(
            f"Gate outputs {gate_weights.out_features} logits for {cfg.num_experts} experts"
        )
    if tokens.shape[-1] != gate_weights.in_features:
        raise ShapeError(
            f"Tokens have width {tokens.shape[-1]}, gate expects {gate_weights.in_features}"
        )

    logits = gate_weights(tokens)
    if training and cfg.sigma > 0:
        noise = torch.randn(logits.shape, generator=generator, device=logits.device, dtype=logits.dtype)
        logits = logits + cfg.sigma * noise

    probs = torch.softmax(logits, dim=-1)
    topk = select_topk(probs.detach(), cfg.top_k)
    return RouterDecision(probs=probs, noisy_logits=logits, topk=topk, k=cfg.top_k)


def combine(expert_outputs: Sequence[Optional[torch.Tensor]], decision: RouterDecision) -> torch.Tensor:
    """
    Mix expert outputs with the gate probabilities of the selected experts.

    Row n of the result is sum over i in topk[n] of probs[n, i] * expert_outputs[i][n].
    Experts that no token selected may be passed as None.

    Args:
        expert_outputs (Sequence[Optional[torch.Tensor]]): E tensors [..., N, out]
        decision (RouterDecision): Gate decision for the same tokens

    Returns:
        torch.Tensor: [..., N, out]

    Raises:
        RoutingError: An expert selected by some token has no output
    """
    if len(expert_outputs) != decision.num_experts:
        raise RoutingError(
            f"Got {len(expert_outputs)} expert outputs for {decision.num_experts} experts"
        )

    mask = decision.selection_mask()
    present = [out for out in expert_outputs if out is not None]
    if not present:
        raise RoutingError("No expert produced an output")
    result = torch.zeros_like(present[0])

    for index, out in enumerate(expert_outputs):
        selected = mask[..., index]
        if not bool(selected.any()):
            continue
        if out is None:
            raise RoutingError(f"Expert {index} was selected but produced no output")
        weight = torch.where(selected, decision.probs[..., index], torch.zeros_like(decision.probs[..., index]))
        result = result + weight.unsqueeze(-1) * out
    return result


def dispatch(tokens: torch.Tensor, experts: Sequence[nn.Module],
             decision: RouterDecision) -> Tuple[List[Optional[torch.Tensor]], int]:
    """
    Run every expert only on the tokens that selected it.

    Args:
        tokens (torch.Tensor): [..., N, D]
        experts (Sequence[nn.Module]): E experts mapping D → out
        decision (RouterDecision): Gate decision for tokens

    Returns:
        Tuple[List[Optional[torch.Tensor]], int]: per-expert outputs scattered back
        into token order (zero rows for tokens that did not select the expert, None
        for experts nobody selected) and the number of expert evaluations performed
    """
    mask = decision.selection_mask()
    flat_tokens = tokens.reshape(-1, tokens.shape[-1])
    flat_mask = mask.reshape(-1, mask.shape[-1])

    outputs: List[Optional[torch.Tensor]] = []
    evaluations = 0
    for index, expert in enumerate(experts):
        rows = torch.nonzero(flat_mask[:, index], as_tuple=False).squeeze(-1)
        if rows.numel() == 0:
            outputs.append(None)
            continue
        evaluations += rows.numel()
        routed = expert(flat_tokens.index_select(0, rows))
        full = routed.new_zeros(flat_tokens.shape[0], routed.shape[-1])
        full = full.index_copy(0, rows, routed)
        outputs.append(full.reshape(*tokens.shape[:-1], routed.shape[-1]))
    return outputs, evaluations


class NoisyTopKRouter(nn.Module):
    """
    Learnable gate D → E with noisy top-k selection.

    The gate is zero-initialized so an untrained router is symmetric across
    experts; selection among equal probabilities then depends only on the noise.

    Args:
        embed_dim (int): Token width D
        cfg (GateConfig): Expert count, k and noise scale
    """

    def __init__(self, embed_dim: int, cfg: GateConfig):
        super().__init__()
        self.cfg = cfg
        self.gate = nn.Linear(embed_dim, cfg.num_experts)
        nn.init.zeros_(self.gate.weight)
        nn.init.zeros_(self.gate.bias)

    def forward(self, tokens: torch.Tensor, generator: Optional[torch.Generator] = None) -> RouterDecision:
        return gate(tokens, self.gate, self.cfg, self.training, generator)
