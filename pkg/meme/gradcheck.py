"""
Finite-Difference Suite

Compares analytic gradients of every loss and block against central finite
differences on small random instances (D=16, K=4, E=4, N=6) in float64.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Tuple

import torch
import torch.nn as nn
from torch.func import functional_call

from models.config import GateConfig
from .backbone import HeadOutput
from .blocks import (
    ExpertAssignment,
    FusionBlock,
    LowRankExpert,
    NoisyTopKRouter,
    PromptBlock,
    SharedExpert,
    combine,
    dispatch,
)
from .objectives import importance_loss, load_loss, moe_loss, tracking_loss

logger = logging.getLogger(__name__)

EMBED_DIM = 16
RANK = 4
EXPERTS = 4
TEMPLATE_GRID = (1, 2)
SEARCH_GRID = (2, 2)
TOKENS = TEMPLATE_GRID[0] * TEMPLATE_GRID[1] + SEARCH_GRID[0] * SEARCH_GRID[1]
BATCH = 2


@dataclass
class GradcheckEntry:
    name: str
    inputs: int
    passed: bool


def _randn(generator: torch.Generator, *shape: int) -> torch.Tensor:
    return torch.randn(*shape, generator=generator, dtype=torch.float64).requires_grad_()


def _randomize(module: nn.Module, generator: torch.Generator) -> nn.Module:
    module = module.double()
    with torch.no_grad():
        for param in module.parameters():
            param.copy_(0.5 * torch.randn(param.shape, generator=generator, dtype=torch.float64))
    return module


def module_function(module: nn.Module, forward: Callable[..., torch.Tensor],
                    n_inputs: int) -> Tuple[Callable[..., torch.Tensor], Tuple[torch.Tensor, ...]]:
    """
    Expose a module's parameters as explicit function inputs.

    Returns:
        Tuple: a function of (*inputs, *params) and the parameter tensors
    """
    names = [name for name, _ in module.named_parameters()]
    params = tuple(p.detach().clone().requires_grad_() for p in module.parameters())

    def fn(*flat: torch.Tensor) -> torch.Tensor:
        overrides = dict(zip(names, flat[n_inputs:]))
        return forward(lambda *a: functional_call(module, overrides, a), *flat[:n_inputs])

    return fn, params


def build_cases(seed: int = 0) -> Dict[str, Tuple[Callable[..., torch.Tensor], Sequence[torch.Tensor]]]:
    """Every checked function with its float64 inputs."""
    g = torch.Generator().manual_seed(seed)
    cases: Dict[str, Tuple[Callable[..., torch.Tensor], Sequence[torch.Tensor]]] = {}

    assignment = ExpertAssignment.contiguous(("depth", "thermal"), EXPERTS // 2)
    gate_cfg = GateConfig(num_experts=EXPERTS, top_k=2, gate_noise=1.0)
    modalities = ["depth", "thermal"]

    cases["moe_loss"] = (
        lambda logits: moe_loss(torch.softmax(logits, -1), modalities, assignment),
        (_randn(g, BATCH, EXPERTS),),
    )
    cases["importance_loss"] = (
        lambda logits: importance_loss(torch.softmax(logits, -1)),
        (_randn(g, BATCH, TOKENS, EXPERTS),),
    )
    cases["load_loss"] = (
        lambda logits: load_loss(torch.softmax(logits, -1), gate_cfg),
        (_randn(g, BATCH, TOKENS, EXPERTS),),
    )

    gt_boxes = torch.tensor([[5.0, 6.0, 10.0, 12.0], [14.0, 9.0, 8.0, 8.0]], dtype=torch.float64)

    def track(score, offset, size):
        head = HeadOutput(score, torch.sigmoid(offset), torch.sigmoid(size), patch_size=8, search_size=32)
        return tracking_loss(head, gt_boxes)

    cases["tracking_loss"] = (track, (_randn(g, BATCH, 4, 4), _randn(g, BATCH, 2, 4, 4), _randn(g, BATCH, 2, 4, 4)))

    router = _randomize(NoisyTopKRouter(EMBED_DIM, gate_cfg), g).eval()
    experts = nn.ModuleList([_randomize(LowRankExpert(EMBED_DIM, RANK), g) for _ in range(EXPERTS)])

    def routed(tokens):
        decision = router(tokens)
        outputs, _ = dispatch(tokens, experts, decision)
        return combine(outputs, decision)

    cases["router_combine"] = (routed, (_randn(g, BATCH, TOKENS, EMBED_DIM),))

    expert = _randomize(LowRankExpert(EMBED_DIM, RANK), g)
    fn, params = module_function(expert, lambda call, tokens: call(tokens), 1)
    cases["specialized_expert"] = (fn, (_randn(g, BATCH, TOKENS, EMBED_DIM), *params))

    shared = _randomize(SharedExpert(EMBED_DIM, RANK), g)
    fn, params = module_function(shared, lambda call, tokens: call(tokens, (TEMPLATE_GRID, SEARCH_GRID)), 1)
    cases["shared_expert"] = (fn, (_randn(g, BATCH, TOKENS, EMBED_DIM), *params))

    fusion = _randomize(FusionBlock(RANK), g)
    fn, params = module_function(fusion, lambda call, r, s: call(r, s), 2)
    cases["fusion"] = (fn, (_randn(g, BATCH, TOKENS, RANK), _randn(g, BATCH, TOKENS, RANK), *params))

    block = _randomize(PromptBlock(EMBED_DIM, RANK), g)
    fn, params = module_function(block, lambda call, rgb, m: call(rgb, m), 2)
    cases["prompt"] = (fn, (_randn(g, BATCH, TOKENS, EMBED_DIM), _randn(g, BATCH, TOKENS, RANK), *params))
    return cases


def run_gradcheck(eps: float = 1e-4, rtol: float = 1e-3, atol: float = 1e-6, seed: int = 0) -> List[GradcheckEntry]:
    """
    Run every case through torch.autograd.gradcheck.

    Returns:
        List[GradcheckEntry]: one pass/fail entry per case
    """
    entries = []
    for name, (fn, inputs) in build_cases(seed).items():
        passed = torch.autograd.gradcheck(
            fn, tuple(inputs), eps=eps, atol=atol, rtol=rtol, raise_exception=False,
        )
        if not passed:
            logger.warning(f"Gradient check failed for {name}")
        entries.append(GradcheckEntry(name=name, inputs=len(inputs), passed=bool(passed)))
    return entries
