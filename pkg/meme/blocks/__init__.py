"""
Blocks Module

This module exports the building blocks of the mixture of modal experts.
"""

from .router import NoisyTopKRouter, RouterDecision, gate, combine, dispatch, select_topk
from .experts import (
    EdgeMixer,
    ExpertAssignment,
    LowRankExpert,
    SharedExpert,
    expert_parameter_count,
    init_laplacian,
    shared_forward,
    specialized_forward,
)
from .fusion import FusionBlock, fuse
from .prompt import PromptBlock, prompt
from .meme_layer import LayerOutput, MemeLayer

__all__ = [
    'NoisyTopKRouter',
    'RouterDecision',
    'gate',
    'combine',
    'dispatch',
    'select_topk',
    'EdgeMixer',
    'ExpertAssignment',
    'LowRankExpert',
    'SharedExpert',
    'expert_parameter_count',
    'init_laplacian',
    'shared_forward',
    'specialized_forward',
    'FusionBlock',
    'fuse',
    'PromptBlock',
    'prompt',
    'LayerOutput',
    'MemeLayer',
]
